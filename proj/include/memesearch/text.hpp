#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "memesearch/corpus.hpp"

namespace memesearch {

/// Splits on whitespace, strips leading and trailing punctuation from each
/// token, and case-folds. Folding covers ASCII, Latin-1 and Latin
/// Extended-A, which is enough for Spanish (Á→á, Ñ→ñ, Ü→ü). Tokens that are
/// pure punctuation vanish. Invalid UTF-8 bytes pass through unchanged.
std::vector<std::string> tokenize(std::string_view text);

/// Word vectors keyed by token. Loaded from the feature-file format.
class WordVectorTable {
 public:
  WordVectorTable() = default;
  explicit WordVectorTable(FeatureTable table) : table_(std::move(table)) {}

  std::size_t dimension() const { return table_.dimension(); }
  std::size_t size() const { return table_.size(); }
  const std::vector<double>* find(std::string_view token) const {
    return table_.find(token);
  }
  const FeatureTable& table() const { return table_; }

 private:
  FeatureTable table_;
};

WordVectorTable load_word_vectors(const std::filesystem::path& path);

struct TextEmbedding {
  std::vector<double> values;
  std::vector<std::string> dropped;  // out-of-vocabulary tokens, in order
};

/// Mean of the in-vocabulary token vectors; repeated tokens count each time.
/// Throws kInvalidArgument when the caption has no tokens, and
/// UnknownTokensError when every token is out of vocabulary.
TextEmbedding embed_text(std::string_view caption, const WordVectorTable& table);

}  // namespace memesearch
