#include "gridvla/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>
#include <unordered_map>

namespace gridvla {

namespace {

struct Entry {
  const char* word;
  Pos pos;
};

// The whole closed world of the language encoder. Connective function words
// (and, then, as, instead) ride in the preposition bucket; the tag set is
// fixed and has no finer slot for them.
constexpr Entry kEntries[] = {
    {"<pad>", Pos::Junk},
    {"<unk>", Pos::Junk},
    // determiners
    {"the", Pos::Determiner},
    {"a", Pos::Determiner},
    {"an", Pos::Determiner},
    {"this", Pos::Determiner},
    {"these", Pos::Determiner},
    {"those", Pos::Determiner},
    // pronouns
    {"it", Pos::Pronoun},
    {"that", Pos::Pronoun},
    {"one", Pos::Pronoun},
    {"they", Pos::Pronoun},
    {"them", Pos::Pronoun},
    {"its", Pos::Pronoun},
    // quantifiers
    {"all", Pos::Quantifier},
    {"some", Pos::Quantifier},
    {"every", Pos::Quantifier},
    {"each", Pos::Quantifier},
    {"any", Pos::Quantifier},
    {"both", Pos::Quantifier},
    {"few", Pos::Quantifier},
    {"many", Pos::Quantifier},
    // negators
    {"not", Pos::Negator},
    {"never", Pos::Negator},
    {"no", Pos::Negator},
    // nouns
    {"bowl", Pos::Noun},
    {"plate", Pos::Noun},
    {"drawer", Pos::Noun},
    {"block", Pos::Noun},
    {"object", Pos::Noun},
    {"item", Pos::Noun},
    {"thing", Pos::Noun},
    {"table", Pos::Noun},
    {"arm", Pos::Noun},
    {"gripper", Pos::Noun},
    {"message", Pos::Noun},
    {"agent", Pos::Noun},
    {"objective", Pos::Noun},
    {"cup", Pos::Noun},
    {"tray", Pos::Noun},
    {"shelf", Pos::Noun},
    {"box", Pos::Noun},
    {"lid", Pos::Noun},
    {"handle", Pos::Noun},
    {"corner", Pos::Noun},
    {"row", Pos::Noun},
    {"center", Pos::Noun},
    {"edge", Pos::Noun},
    {"side", Pos::Noun},
    {"top", Pos::Noun},
    {"bottom", Pos::Noun},
    {"scene", Pos::Noun},
    {"task", Pos::Noun},
    {"robot", Pos::Noun},
    {"hand", Pos::Noun},
    {"claw", Pos::Noun},
    {"surface", Pos::Noun},
    {"cell", Pos::Noun},
    {"grid", Pos::Noun},
    {"goal", Pos::Noun},
    {"target", Pos::Noun},
    {"piece", Pos::Noun},
    {"tool", Pos::Noun},
    {"part", Pos::Noun},
    {"floor", Pos::Noun},
    // verbs
    {"pick", Pos::Verb},
    {"place", Pos::Verb},
    {"put", Pos::Verb},
    {"open", Pos::Verb},
    {"close", Pos::Verb},
    {"move", Pos::Verb},
    {"push", Pos::Verb},
    {"pull", Pos::Verb},
    {"lift", Pos::Verb},
    {"grab", Pos::Verb},
    {"drop", Pos::Verb},
    {"take", Pos::Verb},
    {"hold", Pos::Verb},
    {"release", Pos::Verb},
    {"wave", Pos::Verb},
    {"ignore", Pos::Verb},
    {"act", Pos::Verb},
    {"overturn", Pos::Verb},
    {"turn", Pos::Verb},
    {"slide", Pos::Verb},
    {"stack", Pos::Verb},
    {"carry", Pos::Verb},
    {"bring", Pos::Verb},
    {"fetch", Pos::Verb},
    {"keep", Pos::Verb},
    {"stop", Pos::Verb},
    {"reach", Pos::Verb},
    {"touch", Pos::Verb},
    {"press", Pos::Verb},
    {"is", Pos::Verb},
    {"be", Pos::Verb},
    {"do", Pos::Verb},
    // adjectives
    {"black", Pos::Adjective},
    {"red", Pos::Adjective},
    {"blue", Pos::Adjective},
    {"white", Pos::Adjective},
    {"small", Pos::Adjective},
    {"large", Pos::Adjective},
    {"steel", Pos::Adjective},
    {"plastic", Pos::Adjective},
    {"green", Pos::Adjective},
    {"yellow", Pos::Adjective},
    {"big", Pos::Adjective},
    {"little", Pos::Adjective},
    {"heavy", Pos::Adjective},
    {"light", Pos::Adjective},
    {"empty", Pos::Adjective},
    {"full", Pos::Adjective},
    {"first", Pos::Adjective},
    {"second", Pos::Adjective},
    {"third", Pos::Adjective},
    {"last", Pos::Adjective},
    {"new", Pos::Adjective},
    {"old", Pos::Adjective},
    {"round", Pos::Adjective},
    {"square", Pos::Adjective},
    {"flat", Pos::Adjective},
    {"wide", Pos::Adjective},
    {"previous", Pos::Adjective},
    {"primary", Pos::Adjective},
    {"antagonistic", Pos::Adjective},
    // prepositions and connectives
    {"up", Pos::Preposition},
    {"down", Pos::Preposition},
    {"in", Pos::Preposition},
    {"on", Pos::Preposition},
    {"at", Pos::Preposition},
    {"to", Pos::Preposition},
    {"of", Pos::Preposition},
    {"from", Pos::Preposition},
    {"with", Pos::Preposition},
    {"by", Pos::Preposition},
    {"over", Pos::Preposition},
    {"under", Pos::Preposition},
    {"left", Pos::Preposition},
    {"right", Pos::Preposition},
    {"between", Pos::Preposition},
    {"near", Pos::Preposition},
    {"beside", Pos::Preposition},
    {"behind", Pos::Preposition},
    {"into", Pos::Preposition},
    {"onto", Pos::Preposition},
    {"above", Pos::Preposition},
    {"below", Pos::Preposition},
    {"across", Pos::Preposition},
    {"around", Pos::Preposition},
    {"through", Pos::Preposition},
    {"and", Pos::Preposition},
    {"then", Pos::Preposition},
    {"as", Pos::Preposition},
    {"instead", Pos::Preposition},
    // code-like junk
    {"print", Pos::Junk},
    {"script", Pos::Junk},
    {"code", Pos::Junk},
    {"hash", Pos::Junk},
    {"zero", Pos::Junk},
    {"if", Pos::Junk},
    {"else", Pos::Junk},
    {"while", Pos::Junk},
    {"return", Pos::Junk},
    {"null", Pos::Junk},
    {"exec", Pos::Junk},
    {"sys", Pos::Junk},
};

const std::unordered_map<std::string, int>& word_index() {
  static const std::unordered_map<std::string, int> index = [] {
    std::unordered_map<std::string, int> m;
    int i = 0;
    for (const Entry& e : kEntries) m.emplace(e.word, i++);
    return m;
  }();
  return index;
}

}  // namespace

const char* to_string(Pos p) {
  switch (p) {
    case Pos::Noun: return "noun";
    case Pos::Verb: return "verb";
    case Pos::Adjective: return "adjective";
    case Pos::Preposition: return "preposition";
    case Pos::Determiner: return "determiner";
    case Pos::Pronoun: return "pronoun";
    case Pos::Quantifier: return "quantifier";
    case Pos::Negator: return "negator";
    case Pos::Junk: return "junk";
  }
  return "?";
}

Vocabulary::Vocabulary() {
  for (const Entry& e : kEntries) {
    words_.emplace_back(e.word);
    tags_.push_back(e.pos);
  }
}

const Vocabulary& Vocabulary::instance() {
  static const Vocabulary v;
  return v;
}

bool Vocabulary::contains(const std::string& word) const {
  return word_index().count(word) > 0;
}

int Vocabulary::id(const std::string& word) const {
  auto it = word_index().find(word);
  if (it == word_index().end()) throw Error("vocabulary: unknown word '" + word + "'");
  return it->second;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size())
    throw Error("vocabulary: id " + std::to_string(id) + " out of range [0," +
                std::to_string(size()) + ")");
  return words_[size_t(id)];
}

Pos Vocabulary::pos(int id) const {
  word(id);  // range check
  return tags_[size_t(id)];
}

std::vector<int> Vocabulary::tokenize(const std::string& text) const {
  std::vector<int> ids;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    auto it = word_index().find(cur);
    ids.push_back(it == word_index().end() ? unk_id() : it->second);
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == '-') {
      flush();
    } else {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return ids;
}

std::vector<Pos> Vocabulary::pos_tags(const std::vector<int>& ids) const {
  std::vector<Pos> tags;
  tags.reserve(ids.size());
  for (int id : ids) tags.push_back(pos(id));
  return tags;
}

std::string Vocabulary::detokenize(const std::vector<int>& ids) const {
  std::string out;
  for (int id : ids) {
    if (id == pad_id()) continue;
    if (!out.empty()) out.push_back(' ');
    out += word(id);
  }
  return out;
}

std::vector<int> Vocabulary::pad_to(std::vector<int> ids, int len) const {
  if (int(ids.size()) > len) ids.resize(size_t(len));
  while (int(ids.size()) < len) ids.push_back(pad_id());
  return ids;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    if (!out.empty()) out.push_back(' ');
    out += cur;
    cur.clear();
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch)) || ch == '-') {
      flush();
    } else {
      cur.push_back(char(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return out;
}

}  // namespace gridvla
