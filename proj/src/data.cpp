#include "prefopt/data.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "prefopt/io.hpp"

namespace prefopt {

namespace {

using nlohmann::json;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Per-prompt candidate stream: a function of the response-generator seed and
// a prompt identity, so the same generator produces the same responses for a
// given prompt regardless of iteration order.
std::mt19937_64 candidate_rng(std::uint64_t response_seed, std::uint64_t prompt_uid) {
  return std::mt19937_64(splitmix64(response_seed ^ splitmix64(prompt_uid)));
}

std::vector<double> normal_vector(std::mt19937_64& rng, int dim) {
  std::normal_distribution<double> dist(0.0, 1.0);
  std::vector<double> v(static_cast<std::size_t>(dim));
  for (double& x : v) x = dist(rng);
  return v;
}

struct Candidate {
  std::vector<double> features;
  int length;
  double reward;
};

double latent_reward(std::span<const double> v, std::span<const double> prompt,
                     std::span<const double> response) {
  // phi(x,y) = [x (.) y ; y]
  const std::size_t d = prompt.size();
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) s += v[i] * prompt[i] * response[i];
  for (std::size_t i = 0; i < d; ++i) s += v[d + i] * response[i];
  return s;
}

void emit_split(std::vector<PreferenceInstance>& out, SplitTag tag,
                std::span<const std::vector<double>> prompts, std::uint64_t prompt_uid_base,
                std::uint64_t response_seed, const GeneratorConfig& cfg,
                std::span<const double> v) {
  std::uniform_int_distribution<int> length_dist(cfg.length_min, cfg.length_max);
  for (std::size_t p = 0; p < prompts.size(); ++p) {
    std::mt19937_64 rng = candidate_rng(response_seed, prompt_uid_base + p);
    std::vector<Candidate> cands(static_cast<std::size_t>(cfg.candidates_per_prompt));
    for (Candidate& c : cands) {
      c.features = normal_vector(rng, cfg.feature_dim);
      c.length = length_dist(rng);
      c.reward = latent_reward(v, prompts[p], c.features);
    }
    std::size_t best = 0, worst = 0;
    for (std::size_t i = 1; i < cands.size(); ++i) {
      if (cands[i].reward > cands[best].reward) best = i;
      if (cands[i].reward < cands[worst].reward) worst = i;
    }
    if (best == worst) worst = best == 0 ? 1 : 0;  // all-equal tie

    std::size_t chosen = best, rejected = worst;
    if (cfg.preference_noise &&
        !bt_keeps_order(cands[best].reward - cands[worst].reward, rng)) {
      std::swap(chosen, rejected);
    }

    PreferenceInstance inst;
    std::ostringstream id;
    id << to_string(tag) << "-";
    id.width(6);
    id.fill('0');
    id << p;
    inst.id = id.str();
    inst.prompt_features = prompts[p];
    inst.chosen_features = cands[chosen].features;
    inst.rejected_features = cands[rejected].features;
    inst.chosen_length = cands[chosen].length;
    inst.rejected_length = cands[rejected].length;
    inst.oracle_reward_chosen = cands[chosen].reward;
    inst.oracle_reward_rejected = cands[rejected].reward;
    inst.split_tag = tag;
    out.push_back(std::move(inst));
  }
}

}  // namespace

bool bt_keeps_order(double delta_r, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  return unit(rng) < sigmoid(delta_r);
}

void GeneratorConfig::validate() const {
  if (candidates_per_prompt < 2) throw ValidationError("need at least two candidates");
  if (n_prompts_train < 1 || n_prompts_valid < 1)
    throw ValidationError("prompt counts must be >= 1");
  if (feature_dim < 1) throw ValidationError("feature_dim must be >= 1");
  if (length_min < 1 || length_max < length_min)
    throw ValidationError("length_range must satisfy 1 <= min <= max");
  if (prompt_seed_train == prompt_seed_valid)
    throw ValidationError("train and valid prompt seeds must differ");
  if (response_seed_train == response_seed_valid)
    throw ValidationError("train and valid response seeds must differ");
}

GeneratorConfig GeneratorConfig::from_master_seed(std::uint64_t seed) {
  GeneratorConfig cfg;
  cfg.reward_vector_seed = seed;
  cfg.prompt_seed_train = seed + 1;
  cfg.prompt_seed_valid = seed + 2;
  cfg.response_seed_train = seed + 3;
  cfg.response_seed_valid = seed + 4;
  return cfg;
}

std::vector<PreferenceInstance> SplitDataset::all() const {
  std::vector<PreferenceInstance> out;
  out.reserve(id.size() + prompt_ood.size() + response_ood.size() + mutual_ood.size());
  for (const auto* split : {&id, &prompt_ood, &response_ood, &mutual_ood})
    out.insert(out.end(), split->begin(), split->end());
  return out;
}

SplitDataset generate(const GeneratorConfig& config) {
  config.validate();
  SplitDataset ds;
  ds.config = config;

  std::mt19937_64 reward_rng(config.reward_vector_seed);
  ds.reward_weights = normal_vector(reward_rng, 2 * config.feature_dim);
  double norm = 0.0;
  for (double w : ds.reward_weights) norm += w * w;
  norm = std::sqrt(norm);
  if (norm > 0.0)
    for (double& w : ds.reward_weights) w /= norm;

  std::mt19937_64 prompt_rng_train(config.prompt_seed_train);
  std::mt19937_64 prompt_rng_valid(config.prompt_seed_valid);
  std::vector<std::vector<double>> prompts_train, prompts_valid;
  for (int i = 0; i < config.n_prompts_train; ++i)
    prompts_train.push_back(normal_vector(prompt_rng_train, config.feature_dim));
  for (int i = 0; i < config.n_prompts_valid; ++i)
    prompts_valid.push_back(normal_vector(prompt_rng_valid, config.feature_dim));

  // Prompt identities: train prompts occupy [0, n_train), valid prompts a
  // disjoint block, so candidate streams never collide across prompt sets.
  const std::uint64_t valid_uid_base = 1ULL << 32;
  emit_split(ds.id, SplitTag::kId, prompts_train, 0, config.response_seed_train, config,
             ds.reward_weights);
  emit_split(ds.prompt_ood, SplitTag::kPromptOod, prompts_valid, valid_uid_base,
             config.response_seed_train, config, ds.reward_weights);
  emit_split(ds.response_ood, SplitTag::kResponseOod, prompts_train, 0,
             config.response_seed_valid, config, ds.reward_weights);
  emit_split(ds.mutual_ood, SplitTag::kMutualOod, prompts_valid, valid_uid_base,
             config.response_seed_valid, config, ds.reward_weights);
  return ds;
}

namespace {

json features_to_json(const std::vector<double>& v) { return json(v); }

std::vector<double> features_from_json(const json& j, const char* field, std::size_t line) {
  if (!j.is_array()) throw ParseError(std::string("field '") + field + "' must be an array", line);
  std::vector<double> out;
  out.reserve(j.size());
  for (const auto& x : j) {
    if (!x.is_number()) throw ParseError(std::string("field '") + field + "' must be numeric", line);
    out.push_back(x.get<double>());
  }
  return out;
}

double number_field(const json& j, const char* field, std::size_t line) {
  const auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field '") + field + "'", line);
  if (!it->is_number()) throw ParseError(std::string("field '") + field + "' must be numeric", line);
  return it->get<double>();
}

int int_field(const json& j, const char* field, std::size_t line) {
  const auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field '") + field + "'", line);
  if (!it->is_number_integer())
    throw ParseError(std::string("field '") + field + "' must be an integer", line);
  return it->get<int>();
}

std::string string_field(const json& j, const char* field, std::size_t line) {
  const auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field '") + field + "'", line);
  if (!it->is_string()) throw ParseError(std::string("field '") + field + "' must be a string", line);
  return it->get<std::string>();
}

std::optional<double> optional_number(const json& j, const char* field, std::size_t line) {
  const auto it = j.find(field);
  if (it == j.end()) return std::nullopt;
  if (!it->is_number()) throw ParseError(std::string("field '") + field + "' must be numeric", line);
  return it->get<double>();
}

std::vector<double> array_field(const json& j, const char* field, std::size_t line) {
  const auto it = j.find(field);
  if (it == j.end()) throw ParseError(std::string("missing field '") + field + "'", line);
  return features_from_json(*it, field, line);
}

void reject_unknown_fields(const json& j, std::span<const char* const> known, std::size_t line) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (item.key() == k) ok = true;
    if (!ok) throw ParseError("unknown field '" + item.key() + "'", line);
  }
}

json parse_line(const std::string& text, std::size_t line) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed record: ") + e.what(), line);
  }
  if (!j.is_object()) throw ParseError("record must be a JSON object", line);
  return j;
}

void check_logp(std::optional<double> v, const char* field, std::size_t line) {
  if (!v.has_value()) return;
  if (!std::isfinite(*v)) throw ParseError(std::string("field '") + field + "' must be finite", line);
  if (*v > 0.0)
    throw ValidationError("line " + std::to_string(line) + ": field '" + field +
                          "': log-probability must be <= 0");
}

}  // namespace

void write_dataset(const std::string& path, std::span<const PreferenceInstance> instances) {
  std::string out;
  for (const PreferenceInstance& inst : instances) {
    json j;
    j["id"] = inst.id;
    j["prompt_features"] = features_to_json(inst.prompt_features);
    j["chosen_features"] = features_to_json(inst.chosen_features);
    j["rejected_features"] = features_to_json(inst.rejected_features);
    j["chosen_length"] = inst.chosen_length;
    j["rejected_length"] = inst.rejected_length;
    if (inst.ref_logp_chosen) j["ref_logp_chosen"] = *inst.ref_logp_chosen;
    if (inst.ref_logp_rejected) j["ref_logp_rejected"] = *inst.ref_logp_rejected;
    if (inst.oracle_reward_chosen) j["oracle_reward_chosen"] = *inst.oracle_reward_chosen;
    if (inst.oracle_reward_rejected) j["oracle_reward_rejected"] = *inst.oracle_reward_rejected;
    j["split_tag"] = to_string(inst.split_tag);
    out += j.dump();
    out += '\n';
  }
  atomic_write(path, out);
}

std::vector<PreferenceInstance> read_dataset(const std::string& path) {
  static constexpr const char* kKnown[] = {
      "id", "prompt_features", "chosen_features", "rejected_features",
      "chosen_length", "rejected_length", "ref_logp_chosen", "ref_logp_rejected",
      "oracle_reward_chosen", "oracle_reward_rejected", "split_tag"};
  std::istringstream in(read_file(path));
  std::vector<PreferenceInstance> out;
  std::string text;
  std::size_t line = 0;
  std::size_t dim = 0;
  bool have_dim = false;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const json j = parse_line(text, line);
    reject_unknown_fields(j, kKnown, line);
    PreferenceInstance inst;
    inst.id = string_field(j, "id", line);
    inst.prompt_features = array_field(j, "prompt_features", line);
    inst.chosen_features = array_field(j, "chosen_features", line);
    inst.rejected_features = array_field(j, "rejected_features", line);
    inst.chosen_length = int_field(j, "chosen_length", line);
    inst.rejected_length = int_field(j, "rejected_length", line);
    inst.ref_logp_chosen = optional_number(j, "ref_logp_chosen", line);
    inst.ref_logp_rejected = optional_number(j, "ref_logp_rejected", line);
    inst.oracle_reward_chosen = optional_number(j, "oracle_reward_chosen", line);
    inst.oracle_reward_rejected = optional_number(j, "oracle_reward_rejected", line);
    try {
      inst.split_tag = split_tag_from_string(string_field(j, "split_tag", line));
    } catch (const ValidationError& e) {
      throw ParseError(std::string("field 'split_tag': ") + e.what(), line);
    }
    check_logp(inst.ref_logp_chosen, "ref_logp_chosen", line);
    check_logp(inst.ref_logp_rejected, "ref_logp_rejected", line);
    try {
      inst.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line) + ": " + e.what());
    }
    if (have_dim && inst.prompt_features.size() != dim)
      throw ValidationError("line " + std::to_string(line) +
                            ": feature dimension differs from earlier records");
    dim = inst.prompt_features.size();
    have_dim = true;
    out.push_back(std::move(inst));
  }
  return out;
}

void write_logp_dump(const std::string& path, std::span<const ScoredInstance> scored) {
  std::string out;
  for (const ScoredInstance& s : scored) {
    json j;
    j["id"] = s.instance.id;
    j["logp_policy_chosen"] = s.logp_chosen;
    j["logp_policy_rejected"] = s.logp_rejected;
    if (s.instance.ref_logp_chosen) j["logp_ref_chosen"] = *s.instance.ref_logp_chosen;
    if (s.instance.ref_logp_rejected) j["logp_ref_rejected"] = *s.instance.ref_logp_rejected;
    j["chosen_length"] = s.instance.chosen_length;
    j["rejected_length"] = s.instance.rejected_length;
    out += j.dump();
    out += '\n';
  }
  atomic_write(path, out);
}

std::vector<ScoredInstance> read_logp_dump(const std::string& path) {
  static constexpr const char* kKnown[] = {
      "id", "logp_policy_chosen", "logp_policy_rejected",
      "logp_ref_chosen", "logp_ref_rejected", "chosen_length", "rejected_length"};
  std::istringstream in(read_file(path));
  std::vector<ScoredInstance> out;
  std::string text;
  std::size_t line = 0;
  while (std::getline(in, text)) {
    ++line;
    if (text.empty()) continue;
    const json j = parse_line(text, line);
    reject_unknown_fields(j, kKnown, line);
    ScoredInstance s;
    s.instance.id = string_field(j, "id", line);
    s.logp_chosen = number_field(j, "logp_policy_chosen", line);
    s.logp_rejected = number_field(j, "logp_policy_rejected", line);
    s.instance.ref_logp_chosen = optional_number(j, "logp_ref_chosen", line);
    s.instance.ref_logp_rejected = optional_number(j, "logp_ref_rejected", line);
    s.instance.chosen_length = int_field(j, "chosen_length", line);
    s.instance.rejected_length = int_field(j, "rejected_length", line);
    check_logp(s.logp_chosen, "logp_policy_chosen", line);
    check_logp(s.logp_rejected, "logp_policy_rejected", line);
    check_logp(s.instance.ref_logp_chosen, "logp_ref_chosen", line);
    check_logp(s.instance.ref_logp_rejected, "logp_ref_rejected", line);
    try {
      s.instance.validate();
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line) + ": " + e.what());
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace prefopt
