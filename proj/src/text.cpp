#include "memesearch/text.hpp"

#include <cstdint>

#include "memesearch/error.hpp"

namespace memesearch {

namespace {

struct Decoded {
  char32_t cp;
  std::size_t length;  // bytes consumed; cp is the raw byte when invalid
  bool valid;
};

Decoded decode(std::string_view s, std::size_t i) {
  const auto b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) return {b0, 1, true};
  std::size_t len = 0;
  char32_t cp = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return {b0, 1, false};
  }
  if (i + len > s.size()) return {b0, 1, false};
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xC0) != 0x80) return {b0, 1, false};
    cp = (cp << 6) | (b & 0x3F);
  }
  return {cp, len, true};
}

void encode(char32_t cp, std::string& out) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  } else {
    out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
  }
}

bool is_space(char32_t cp) {
  return cp == ' ' || cp == '\t' || cp == '\n' || cp == '\r' || cp == '\v' ||
         cp == '\f' || cp == 0x85 || cp == 0xA0 || cp == 0x1680 ||
         (cp >= 0x2000 && cp <= 0x200A) || cp == 0x2028 || cp == 0x2029 ||
         cp == 0x202F || cp == 0x205F || cp == 0x3000;
}

bool is_punct(char32_t cp) {
  if (cp < 0x80) {
    return (cp >= 0x21 && cp <= 0x2F) || (cp >= 0x3A && cp <= 0x40) ||
           (cp >= 0x5B && cp <= 0x60) || (cp >= 0x7B && cp <= 0x7E);
  }
  switch (cp) {
    case 0xA1:  // ¡
    case 0xAB:  // «
    case 0xB7:  // ·
    case 0xBB:  // »
    case 0xBF:  // ¿
      return true;
    default:
      break;
  }
  // General Punctuation block: dashes, quotes, ellipsis, etc.
  return cp >= 0x2010 && cp <= 0x2027;
}

char32_t fold_case(char32_t cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  // Latin-1: À..Þ except ×.
  if (cp >= 0xC0 && cp <= 0xDE && cp != 0xD7) return cp + 0x20;
  // Latin Extended-A: mostly even/odd upper/lower pairs.
  if (cp >= 0x100 && cp <= 0x137 && cp % 2 == 0) return cp + 1;
  if (cp >= 0x139 && cp <= 0x148 && cp % 2 == 1) return cp + 1;
  if (cp >= 0x14A && cp <= 0x177 && cp % 2 == 0) return cp + 1;
  if (cp == 0x178) return 0xFF;
  if (cp >= 0x179 && cp <= 0x17E && cp % 2 == 1) return cp + 1;
  return cp;
}

}  // namespace

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::vector<Decoded> current;
  auto flush = [&] {
    std::size_t lo = 0;
    std::size_t hi = current.size();
    while (lo < hi && current[lo].valid && is_punct(current[lo].cp)) ++lo;
    while (hi > lo && current[hi - 1].valid && is_punct(current[hi - 1].cp)) --hi;
    if (lo < hi) {
      std::string tok;
      for (std::size_t k = lo; k < hi; ++k) {
        if (current[k].valid) {
          encode(fold_case(current[k].cp), tok);
        } else {
          tok.push_back(static_cast<char>(current[k].cp));
        }
      }
      tokens.push_back(std::move(tok));
    }
    current.clear();
  };
  std::size_t i = 0;
  while (i < text.size()) {
    Decoded d = decode(text, i);
    i += d.length;
    if (d.valid && is_space(d.cp)) {
      flush();
    } else {
      current.push_back(d);
    }
  }
  flush();
  return tokens;
}

WordVectorTable load_word_vectors(const std::filesystem::path& path) {
  return WordVectorTable(load_feature_file(path));
}

TextEmbedding embed_text(std::string_view caption,
                         const WordVectorTable& table) {
  const auto tokens = tokenize(caption);
  if (tokens.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "caption has no tokens");
  }
  TextEmbedding out;
  out.values.assign(table.dimension(), 0.0);
  std::size_t used = 0;
  for (const auto& tok : tokens) {
    const auto* v = table.find(tok);
    if (v == nullptr) {
      out.dropped.push_back(tok);
      continue;
    }
    for (std::size_t j = 0; j < v->size(); ++j) out.values[j] += (*v)[j];
    ++used;
  }
  if (used == 0) throw UnknownTokensError(out.dropped);
  for (double& x : out.values) x /= static_cast<double>(used);
  return out;
}

}  // namespace memesearch
