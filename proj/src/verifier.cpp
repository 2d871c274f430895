#include "specache/verifier.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "specache/vertical_model.hpp"

namespace specache {

void to_json(Json& j, const VerifierDecision& d) {
  j = Json{{"request_id", d.request_id}, {"selected", d.selected}, {"fraction", d.fraction_used}};
}

std::size_t selection_count(double fraction, std::size_t n) {
  const double exact = fraction * static_cast<double>(n);
  const double k = std::ceil(exact - 1e-9 * std::max(1.0, exact));
  return std::min(n, static_cast<std::size_t>(std::max(0.0, k)));
}

VerifierDecision select_candidates(const RankingRequest& request, std::span<const double> scores, double fraction) {
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("verifier fraction must lie in (0, 1]");
  const std::size_t n = request.candidates.size();
  if (scores.size() != n) throw ValidationError("verifier: one score per candidate required");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return request.candidates[a] < request.candidates[b];
  });

  VerifierDecision d;
  d.request_id = request.request_id;
  d.fraction_used = fraction;
  const std::size_t keep = selection_count(fraction, n);
  d.selected.reserve(keep);
  d.rejected.reserve(n - keep);
  for (std::size_t k = 0; k < n; ++k) (k < keep ? d.selected : d.rejected).push_back(request.candidates[order[k]]);
  return d;
}

double verifier_score(const VerticalModel& snapshot, const FeatureVector& features) {
  return snapshot.predict(features);
}

}  // namespace specache
