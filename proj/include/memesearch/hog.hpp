#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace memesearch {

/// Row-major grayscale image with intensities in [0, 1].
class GrayImage {
 public:
  GrayImage() = default;

  /// Throws kInvalidArgument on size mismatch, zero size, or intensities
  /// outside [0, 1].
  GrayImage(std::size_t width, std::size_t height, std::vector<double> pixels);

  /// Interleaved 8-bit RGB converted with luminance weights
  /// 0.299 / 0.587 / 0.114.
  static GrayImage from_rgb8(std::size_t width, std::size_t height,
                             std::span<const std::uint8_t> rgb);
  static GrayImage from_gray8(std::size_t width, std::size_t height,
                              std::span<const std::uint8_t> gray);

  std::size_t width() const { return width_; }
  std::size_t height() const { return height_; }
  const std::vector<double>& pixels() const { return pixels_; }
  double at(std::size_t x, std::size_t y) const {
    return pixels_[y * width_ + x];
  }

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<double> pixels_;
};

struct HogConfig {
  std::size_t resize_width = 128;
  std::size_t resize_height = 128;
  std::size_t cell_size = 8;   // pixels per cell side
  std::size_t block_size = 2;  // cells per block side, stride one cell
  std::size_t num_bins = 9;    // unsigned orientations over [0, 180)
  double clip = 0.2;

  /// Throws kInvalidArgument when a field is out of range or the resize
  /// target is not a multiple of the cell size.
  void validate() const;

  std::size_t cells_x() const { return resize_width / cell_size; }
  std::size_t cells_y() const { return resize_height / cell_size; }
  std::size_t blocks_x() const { return cells_x() - block_size + 1; }
  std::size_t blocks_y() const { return cells_y() - block_size + 1; }
  std::size_t block_length() const { return block_size * block_size * num_bins; }
  /// Throws kImageTooSmall if the resize target cannot hold one block.
  std::size_t descriptor_length() const;
};

struct GradientField {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<double> magnitude;
  std::vector<double> orientation;  // degrees in [0, 180)
};

/// Central differences [-1, 0, 1] with replicated edges.
GradientField gradients(const GrayImage& img);

/// Bilinear resampling with pixel-center alignment. Same-size input is
/// returned unchanged.
GrayImage resize_bilinear(const GrayImage& img, std::size_t width,
                          std::size_t height);

/// Resize, per-cell orientation histograms with linear interpolation between
/// adjacent bins, then L2-clip-L2 normalization of every overlapping block.
/// Blocks are emitted row-major; within a block, cells row-major, then bins.
std::vector<double> hog_descriptor(const GrayImage& img,
                                   const HogConfig& cfg = {});

}  // namespace memesearch
