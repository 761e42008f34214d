#pragma once

#include <string>
#include <vector>

#include "gridvla/common.hpp"

namespace gridvla {

// Closed vocabulary for the toy policy: task nouns, attributes, spatial
// terms, verbs, function words, injection-payload words, and code-like junk
// tokens, each carrying exactly one part-of-speech tag. Ids are dense in
// [0, V) with PAD = 0 and UNK = 1.

enum class Pos {
  Noun,
  Verb,
  Adjective,
  Preposition,
  Determiner,
  Pronoun,
  Quantifier,
  Negator,
  Junk,
};

const char* to_string(Pos p);

inline constexpr int kSeqLen = 16;  // model token window

class Vocabulary {
 public:
  static const Vocabulary& instance();

  int size() const { return int(words_.size()); }
  int pad_id() const { return 0; }
  int unk_id() const { return 1; }

  bool contains(const std::string& word) const;
  int id(const std::string& word) const;       // throws on unknown words
  const std::string& word(int id) const;       // throws on out-of-range ids
  Pos pos(int id) const;

  // Lowercases and splits on whitespace and hyphens; unknown words map to
  // UNK. No padding here.
  std::vector<int> tokenize(const std::string& text) const;
  std::vector<Pos> pos_tags(const std::vector<int>& ids) const;

  // Space-joined words; PAD ids are skipped, UNK renders as its word form.
  std::string detokenize(const std::vector<int>& ids) const;

  // Pads with PAD or truncates to exactly len ids.
  std::vector<int> pad_to(std::vector<int> ids, int len = kSeqLen) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::vector<Pos> tags_;
};

// Lowercase + split on whitespace/hyphens + single-space join; the
// normalized form that tokenize/detokenize round-trips to.
std::string normalize_text(const std::string& text);

}  // namespace gridvla
