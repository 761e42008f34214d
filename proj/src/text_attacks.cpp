#include "gridvla/text_attacks.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

#include "gridvla/vocab.hpp"

namespace gridvla {

namespace {

// Per-position L2 norms of the attack-loss gradient wrt the token
// embedding inputs, with the raw gradient matrix for candidate scoring.
struct EmbeddingGrads {
  Tensor rows;                 // {16, 32}
  std::vector<double> norms;   // per position, 0 for PAD
};

EmbeddingGrads embedding_grads(const PolicyModel& m, const Tensor& image, const Tensor& reference,
                               const std::vector<int>& tokens) {
  TapeT<double> tape;
  ForwardVars fv = build_forward(tape, m, image, tokens);
  Var loss = attack_loss_on(tape, fv.action, reference);
  tape.backward(loss);
  EmbeddingGrads out{tape.grad(fv.token_embeddings), {}};
  out.norms.resize(tokens.size(), 0.0);
  const int pad = Vocabulary::instance().pad_id();
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == pad) continue;
    double s = 0.0;
    for (int c = 0; c < kEmbedDim; ++c) s += out.rows.at(int(i), c) * out.rows.at(int(i), c);
    out.norms[i] = std::sqrt(s);
  }
  return out;
}

// Non-PAD, non-excluded positions sorted by decreasing gradient norm,
// ties to the lowest index.
std::vector<int> ranked_positions(const EmbeddingGrads& g, const std::vector<int>& tokens,
                                  const std::vector<int>& exclude) {
  const int pad = Vocabulary::instance().pad_id();
  std::vector<int> order;
  for (size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == pad) continue;
    if (std::find(exclude.begin(), exclude.end(), int(i)) != exclude.end()) continue;
    order.push_back(int(i));
  }
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return g.norms[a] > g.norms[b]; });
  return order;
}

double loss_with(const PolicyModel& m, const Tensor& image, const Tensor& reference,
                 const std::vector<int>& tokens) {
  return attack_loss(reference, forward(m, image, tokens));
}

TextAttackResult substitution_attack(const PolicyModel& m, const Tensor& image,
                                     const std::vector<int>& tokens, int k, int iterations,
                                     const TextAttackConfig& cfg) {
  if (iterations < 1) throw Error("substitution attack: iterations must be >= 1");
  Tensor reference = forward(m, image, tokens);
  std::vector<int> work = tokens;
  std::vector<int> frozen;
  TextAttackResult out{work, {}};
  for (int it = 0; it < iterations; ++it) {
    EmbeddingGrads g = embedding_grads(m, image, reference, work);
    std::vector<int> order = ranked_positions(g, work, frozen);
    bool accepted = false;
    for (int pos : order) {
      CandidateSet cands =
          build_candidates(m, image, reference, work, pos, k, cfg.top_general, cfg);
      SubstitutionResult r = greedy_substitute(m, image, reference, work, pos, cands);
      if (!r.changed) continue;
      work = r.tokens;
      frozen.push_back(pos);
      out.trace.push_back(r.loss);
      accepted = true;
      break;
    }
    if (!accepted) break;  // no improving move anywhere
  }
  out.tokens = work;
  return out;
}

}  // namespace

const std::vector<std::string>& TextAttackConfig::lexicon(int k) const {
  switch (k) {
    case 1: return lexicon_referential;
    case 2: return lexicon_attribute;
    case 3: return lexicon_spatial;
    case 4: return lexicon_negation;
  }
  throw Error("lexicon category must be 1..4, got " + std::to_string(k));
}

TextAttackConfig TextAttackConfig::from_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open text attack config: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("bad text attack config " + path + ": " + e.what());
  }
  TextAttackConfig cfg;
  for (const auto& [key, value] : j.items()) {
    if (key == "top_general") cfg.top_general = value.get<int>();
    else if (key == "iterations") cfg.iterations = value.get<int>();
    else if (key == "suffix_context_reset") cfg.suffix_context_reset = value.get<std::string>();
    else if (key == "suffix_random_code") cfg.suffix_random_code = value.get<std::string>();
    else if (key == "prefix_payload") cfg.prefix_payload = value.get<std::string>();
    else if (key == "lexicon_referential") cfg.lexicon_referential = value.get<std::vector<std::string>>();
    else if (key == "lexicon_attribute") cfg.lexicon_attribute = value.get<std::vector<std::string>>();
    else if (key == "lexicon_spatial") cfg.lexicon_spatial = value.get<std::vector<std::string>>();
    else if (key == "lexicon_negation") cfg.lexicon_negation = value.get<std::vector<std::string>>();
    else throw Error("unknown text attack config key: " + key);
  }
  if (cfg.top_general < 1) throw Error("top_general must be >= 1");
  if (cfg.iterations < 1) throw Error("iterations must be >= 1");
  return cfg;
}

std::string TextAttackConfig::to_json() const {
  nlohmann::json j{{"top_general", top_general},
                   {"iterations", iterations},
                   {"suffix_context_reset", suffix_context_reset},
                   {"suffix_random_code", suffix_random_code},
                   {"prefix_payload", prefix_payload},
                   {"lexicon_referential", lexicon_referential},
                   {"lexicon_attribute", lexicon_attribute},
                   {"lexicon_spatial", lexicon_spatial},
                   {"lexicon_negation", lexicon_negation}};
  return j.dump(2);
}

int select_coordinate(const PolicyModel& m, const Tensor& image, const Tensor& reference,
                      const std::vector<int>& tokens, const std::vector<int>& exclude) {
  EmbeddingGrads g = embedding_grads(m, image, reference, tokens);
  std::vector<int> order = ranked_positions(g, tokens, exclude);
  if (order.empty()) throw Error("select_coordinate: no selectable position");
  return order.front();
}

CandidateSet build_candidates(const PolicyModel& m, const Tensor& image, const Tensor& reference,
                              const std::vector<int>& tokens, int position, int k, int top_general,
                              const TextAttackConfig& cfg) {
  const auto& v = Vocabulary::instance();
  if (position < 0 || position >= int(tokens.size()))
    throw Error("build_candidates: position out of range");
  if (tokens[position] == v.pad_id()) throw Error("build_candidates: position is PAD");
  if (top_general < 0) throw Error("build_candidates: top_general must be >= 0");

  CandidateSet out;
  out.category = k;
  out.position = position;
  const int cur = tokens[position];

  // First-order score for swapping in token c: <grad, e_c - e_cur>.
  EmbeddingGrads g = embedding_grads(m, image, reference, tokens);
  std::vector<std::pair<double, int>> scored;
  for (int id = 0; id < v.size(); ++id) {
    if (id == v.pad_id()) continue;
    double s = 0.0;
    for (int c = 0; c < kEmbedDim; ++c)
      s += g.rows.at(position, c) * (m.token_table.at(id, c) - m.token_table.at(cur, c));
    scored.push_back({s, id});
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  });
  int take = std::min<int>(top_general, int(scored.size()));
  for (int i = 0; i < take; ++i) out.general.push_back(scored[i].second);

  if (k != 0)
    for (const std::string& w : cfg.lexicon(k)) {
      int id = v.id(w);
      if (id != cur) out.lexical.push_back(id);
    }

  out.all = out.general;
  for (int id : out.lexical)
    if (std::find(out.all.begin(), out.all.end(), id) == out.all.end()) out.all.push_back(id);
  if (out.all.empty()) throw Error("build_candidates: empty candidate union");
  return out;
}

SubstitutionResult greedy_substitute(const PolicyModel& m, const Tensor& image,
                                     const Tensor& reference, const std::vector<int>& tokens,
                                     int position, const CandidateSet& candidates) {
  const auto& v = Vocabulary::instance();
  const Pos want = v.pos(tokens[position]);

  SubstitutionResult out{tokens, loss_with(m, image, reference, tokens), false};
  double best = out.loss;
  int best_id = -1;
  for (int id : candidates.all) {
    if (id == tokens[position]) continue;
    if (candidates.category != 0 && v.pos(id) != want) continue;
    std::vector<int> trial = tokens;
    trial[position] = id;
    double l = loss_with(m, image, reference, trial);
    if (l > best || (l == best && best_id != -1 && id < best_id)) {
      best = l;
      best_id = id;
    }
  }
  if (best_id != -1) {  // strict improvement only
    out.tokens[position] = best_id;
    out.loss = best;
    out.changed = true;
  }
  return out;
}

TextAttackResult sgcg_attack(const PolicyModel& m, const Tensor& image,
                             const std::vector<int>& tokens, int k, int iterations,
                             const TextAttackConfig& cfg) {
  if (k < 1 || k > 4) throw Error("sgcg_attack: category must be 1..4");
  return substitution_attack(m, image, tokens, k, iterations, cfg);
}

TextAttackResult gcg_attack(const PolicyModel& m, const Tensor& image,
                            const std::vector<int>& tokens, int iterations,
                            const TextAttackConfig& cfg) {
  return substitution_attack(m, image, tokens, 0, iterations, cfg);
}

std::string inject_suffix(const std::string& text, InjectVariant variant,
                          const TextAttackConfig& cfg) {
  switch (variant) {
    case InjectVariant::ContextReset: return text + " " + cfg.suffix_context_reset;
    case InjectVariant::RandomCode: return text + " " + cfg.suffix_random_code;
  }
  throw Error("inject_suffix: unknown variant");
}

std::string inject_prefix(const std::string& text, const TextAttackConfig& cfg) {
  return cfg.prefix_payload + " " + text;
}

double semantic_similarity(const std::string& a, const std::string& b, const PolicyModel& m) {
  const auto& v = Vocabulary::instance();
  auto mean_embedding = [&](const std::string& text) {
    std::vector<int> ids = v.tokenize(text);
    if (ids.empty()) throw Error("semantic_similarity: empty text");
    std::vector<double> mean(kEmbedDim, 0.0);
    int n = 0;
    for (int id : ids) {
      if (id == v.pad_id()) continue;
      if (++n > kSeqLen) break;  // the model window
      for (int c = 0; c < kEmbedDim; ++c) mean[c] += m.token_table.at(id, c);
    }
    if (n == 0) throw Error("semantic_similarity: no non-PAD tokens");
    for (double& x : mean) x /= std::min(n, kSeqLen);
    return mean;
  };
  std::vector<double> ea = mean_embedding(a), eb = mean_embedding(b);
  double dot = 0, na = 0, nb = 0;
  for (int c = 0; c < kEmbedDim; ++c) {
    dot += ea[c] * eb[c];
    na += ea[c] * ea[c];
    nb += eb[c] * eb[c];
  }
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-12);
}

}  // namespace gridvla
