#include "memesearch/hog.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "memesearch/error.hpp"

namespace memesearch {

namespace {

constexpr double kNormEpsilon = 1e-12;

}  // namespace

GrayImage::GrayImage(std::size_t width, std::size_t height,
                     std::vector<double> pixels)
    : width_(width), height_(height), pixels_(std::move(pixels)) {
  if (width_ == 0 || height_ == 0) {
    throw Error(ErrorCode::kInvalidArgument, "image has zero size");
  }
  if (pixels_.size() != width_ * height_) {
    throw Error(ErrorCode::kInvalidArgument,
                "image buffer holds " + std::to_string(pixels_.size()) +
                    " values, expected " + std::to_string(width_ * height_));
  }
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= 1.0)) {
      throw Error(ErrorCode::kInvalidArgument,
                  "image intensity outside [0, 1]");
    }
  }
}

GrayImage GrayImage::from_rgb8(std::size_t width, std::size_t height,
                               std::span<const std::uint8_t> rgb) {
  if (rgb.size() != width * height * 3) {
    throw Error(ErrorCode::kInvalidArgument, "RGB buffer size mismatch");
  }
  std::vector<double> px(width * height);
  for (std::size_t i = 0; i < px.size(); ++i) {
    const double y = 0.299 * rgb[3 * i] + 0.587 * rgb[3 * i + 1] +
                     0.114 * rgb[3 * i + 2];
    px[i] = std::clamp(y / 255.0, 0.0, 1.0);
  }
  return GrayImage(width, height, std::move(px));
}

GrayImage GrayImage::from_gray8(std::size_t width, std::size_t height,
                                std::span<const std::uint8_t> gray) {
  if (gray.size() != width * height) {
    throw Error(ErrorCode::kInvalidArgument, "gray buffer size mismatch");
  }
  std::vector<double> px(gray.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = gray[i] / 255.0;
  return GrayImage(width, height, std::move(px));
}

void HogConfig::validate() const {
  if (cell_size == 0 || block_size == 0 || num_bins < 2) {
    throw Error(ErrorCode::kInvalidArgument,
                "HOG config needs cell_size >= 1, block_size >= 1, num_bins >= 2");
  }
  if (!(clip > 0.0 && clip <= 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "HOG clip must lie in (0, 1]");
  }
  if (resize_width == 0 || resize_height == 0 ||
      resize_width % cell_size != 0 || resize_height % cell_size != 0) {
    throw Error(ErrorCode::kInvalidArgument,
                "HOG resize target must be a positive multiple of cell_size");
  }
}

std::size_t HogConfig::descriptor_length() const {
  validate();
  if (cells_x() < block_size || cells_y() < block_size) {
    throw Error(ErrorCode::kImageTooSmall,
                "resize target " + std::to_string(resize_width) + "x" +
                    std::to_string(resize_height) + " is smaller than one " +
                    std::to_string(block_size * cell_size) + "-pixel block");
  }
  return blocks_x() * blocks_y() * block_length();
}

GradientField gradients(const GrayImage& img) {
  const std::size_t w = img.width();
  const std::size_t h = img.height();
  GradientField g{w, h, std::vector<double>(w * h), std::vector<double>(w * h)};
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t up = y == 0 ? 0 : y - 1;
    const std::size_t down = y + 1 == h ? y : y + 1;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t left = x == 0 ? 0 : x - 1;
      const std::size_t right = x + 1 == w ? x : x + 1;
      const double gx = img.at(right, y) - img.at(left, y);
      const double gy = img.at(x, down) - img.at(x, up);
      double angle = std::atan2(gy, gx) * 180.0 / std::numbers::pi;
      if (angle < 0.0) angle += 180.0;
      if (angle >= 180.0) angle -= 180.0;
      g.magnitude[y * w + x] = std::hypot(gx, gy);
      g.orientation[y * w + x] = angle;
    }
  }
  return g;
}

GrayImage resize_bilinear(const GrayImage& img, std::size_t width,
                          std::size_t height) {
  if (width == img.width() && height == img.height()) return img;
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  const double max_x = static_cast<double>(img.width() - 1);
  const double max_y = static_cast<double>(img.height() - 1);
  std::vector<double> out(width * height);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, max_y);
    const auto y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, img.height() - 1);
    const double ty = fy - y0;
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, max_x);
      const auto x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, img.width() - 1);
      const double tx = fx - x0;
      const double top = img.at(x0, y0) * (1 - tx) + img.at(x1, y0) * tx;
      const double bottom = img.at(x0, y1) * (1 - tx) + img.at(x1, y1) * tx;
      out[y * width + x] = std::clamp(top * (1 - ty) + bottom * ty, 0.0, 1.0);
    }
  }
  return GrayImage(width, height, std::move(out));
}

std::vector<double> hog_descriptor(const GrayImage& img, const HogConfig& cfg) {
  const std::size_t length = cfg.descriptor_length();
  const GrayImage resized =
      resize_bilinear(img, cfg.resize_width, cfg.resize_height);
  const GradientField grad = gradients(resized);

  const std::size_t bins = cfg.num_bins;
  const double bin_width = 180.0 / static_cast<double>(bins);
  const std::size_t cx_count = cfg.cells_x();
  const std::size_t cy_count = cfg.cells_y();

  // Cell histograms, each pixel voting into the two nearest bin centers.
  std::vector<double> cells(cx_count * cy_count * bins, 0.0);
  for (std::size_t y = 0; y < grad.height; ++y) {
    const std::size_t cy = y / cfg.cell_size;
    for (std::size_t x = 0; x < grad.width; ++x) {
      const double mag = grad.magnitude[y * grad.width + x];
      if (mag == 0.0) continue;
      const double pos = grad.orientation[y * grad.width + x] / bin_width - 0.5;
      const double lo = std::floor(pos);
      const double frac = pos - lo;
      const auto b0 = static_cast<std::size_t>(
          (static_cast<long long>(lo) + static_cast<long long>(bins)) %
          static_cast<long long>(bins));
      const std::size_t b1 = (b0 + 1) % bins;
      double* hist = &cells[(cy * cx_count + x / cfg.cell_size) * bins];
      hist[b0] += mag * (1.0 - frac);
      hist[b1] += mag * frac;
    }
  }

  std::vector<double> out;
  out.reserve(length);
  std::vector<double> block(cfg.block_length());
  for (std::size_t by = 0; by < cfg.blocks_y(); ++by) {
    for (std::size_t bx = 0; bx < cfg.blocks_x(); ++bx) {
      std::size_t k = 0;
      for (std::size_t j = 0; j < cfg.block_size; ++j) {
        for (std::size_t i = 0; i < cfg.block_size; ++i) {
          const double* hist = &cells[((by + j) * cx_count + bx + i) * bins];
          for (std::size_t b = 0; b < bins; ++b) block[k++] = hist[b];
        }
      }
      double sq = 0.0;
      for (double v : block) sq += v * v;
      double scale = 1.0 / std::sqrt(sq + kNormEpsilon);
      sq = 0.0;
      for (double& v : block) {
        v = std::min(v * scale, cfg.clip);
        sq += v * v;
      }
      scale = 1.0 / std::sqrt(sq + kNormEpsilon);
      for (double v : block) out.push_back(v * scale);
    }
  }
  return out;
}

}  // namespace memesearch
