#pragma once

#include <cstdint>
#include <vector>

#include "specache/common.hpp"
#include "specache/json_util.hpp"
#include "specache/world.hpp"

namespace specache {

class VerticalModel;
struct FeatureVector;

/// Outcome of filtering one request's candidates for speculative precompute.
struct VerifierDecision {
  std::uint64_t request_id = 0;
  /// Descending score; ties broken by ascending item_id.
  std::vector<ItemId> selected;
  std::vector<ItemId> rejected;
  double fraction_used = 0.0;
};

/// {request_id, selected[], fraction} for audit replay.
void to_json(Json& j, const VerifierDecision& d);

/// ceil(fraction * n), computed so that exact decimal products such as
/// 0.2 * 200 are not pushed up by representation error.
std::size_t selection_count(double fraction, std::size_t n);

/// Keeps the top ceil(fraction * n) candidates by score.
///
/// Throws ValidationError if fraction is outside (0, 1] or the score count
/// differs from the candidate count.
VerifierDecision select_candidates(const RankingRequest& request, std::span<const double> scores, double fraction);

/// The current vertical model's predicted probability for a pair, from
/// whatever features are available right now.
double verifier_score(const VerticalModel& snapshot, const FeatureVector& features);

}  // namespace specache
