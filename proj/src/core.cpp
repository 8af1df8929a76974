#include "prefopt/core.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace prefopt {

const char* to_string(SplitTag tag) {
  switch (tag) {
    case SplitTag::kId: return "id";
    case SplitTag::kPromptOod: return "prompt_ood";
    case SplitTag::kResponseOod: return "response_ood";
    case SplitTag::kMutualOod: return "mutual_ood";
  }
  return "id";
}

SplitTag split_tag_from_string(const std::string& s) {
  if (s == "id") return SplitTag::kId;
  if (s == "prompt_ood") return SplitTag::kPromptOod;
  if (s == "response_ood") return SplitTag::kResponseOod;
  if (s == "mutual_ood") return SplitTag::kMutualOod;
  throw ValidationError("unknown split_tag '" + s + "'");
}

void PreferenceInstance::validate() const {
  if (chosen_length < 1) throw ValidationError("chosen_length must be >= 1");
  if (rejected_length < 1) throw ValidationError("rejected_length must be >= 1");
  if (ref_logp_chosen.has_value() != ref_logp_rejected.has_value())
    throw ValidationError("ref_logp_chosen/ref_logp_rejected must be present together");
  for (const auto& ref : {ref_logp_chosen, ref_logp_rejected}) {
    if (!ref.has_value()) continue;
    if (!std::isfinite(*ref) || *ref > 0.0)
      throw ValidationError("log-probability must be <= 0");
  }
  const std::size_t d = prompt_features.size();
  if (chosen_features.size() != d || rejected_features.size() != d)
    throw ValidationError("feature vectors must share dimension");
}

double sigmoid(double x) {
  if (x >= 0.0) {
    return 1.0 / (1.0 + std::exp(-x));
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double log_sigmoid(double x) {
  if (!std::isfinite(x)) throw ValidationError("non-finite argument");
  // log σ(x) = -softplus(-x), with the branch picked so exp never overflows.
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

BatchStats batch_stats(std::span<const double> r_values) {
  if (r_values.empty()) throw ValidationError("empty batch");
  // Accumulate in sorted order so permuted batches give bit-identical stats.
  std::vector<double> sorted(r_values.begin(), r_values.end());
  std::sort(sorted.begin(), sorted.end());
  double sum = 0.0;
  for (double r : sorted) sum += r;
  const double mu = sum / static_cast<double>(sorted.size());
  double sq = 0.0;
  for (double r : sorted) {
    const double d = r - mu;
    sq += d * d;
  }
  const double var = sq / static_cast<double>(sorted.size());
  return BatchStats{mu, std::sqrt(var), sorted.size()};
}

double perplexity(double logp, int length) {
  if (length < 1) throw ValidationError("zero length");
  if (!std::isfinite(logp)) throw ValidationError("non-finite argument");
  return std::exp(-logp / static_cast<double>(length));
}

}  // namespace prefopt
