#pragma once

/**
 * @file metric.hpp
 * @brief ARISE and the baseline Scaling Metric.
 *
 * Everything here is a pure function of its inputs. Trajectories are indexed by
 * the configured scaling-level order (level 0 is the baseline) and are never
 * re-sorted by measured token counts.
 *
 * Per-sample ARISE sums, over adjacent level pairs only,
 *
 *     delta_a * (t_prev / t_next) ^ sign(delta_a)
 *
 * which for binary accuracies is 0 (unchanged), +t_prev/t_next (improvement)
 * or -t_next/t_prev (degradation). Fractional accuracies produced by averaging
 * repeated trials go through the same general form.
 */

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace arise {

/// Finalized accuracy and token consumption of one sample at one scaling level.
struct LevelOutcome {
  double accuracy = 0.0;  // in [0, 1]
  double tokens = 0.0;    // > 0
};

struct SampleTrajectory {
  std::string sample_id;
  std::vector<LevelOutcome> levels;  // index 0 = baseline level
};

struct TransitionCounts {
  std::size_t improve = 0;
  std::size_t degrade = 0;
  std::size_t unchanged = 0;
};

struct TrajectoryDiagnostics {
  // Set when some adjacent pair has t(j) <= t(j-1).
  bool non_monotone_tokens = false;
  TransitionCounts transitions;
};

struct SampleScore {
  double score = 0.0;
  TrajectoryDiagnostics diagnostics;
};

/// Throws DomainError naming `level_index` if the outcome is outside its domain.
void validate_outcome(const LevelOutcome& outcome, std::size_t level_index);

/// (prev.tokens / next.tokens) ^ sign(next.accuracy - prev.accuracy), with sign(0) = 0.
double transition_weight(const LevelOutcome& prev, const LevelOutcome& next,
                         std::size_t next_level_index = 1);

/// One summand of per-sample ARISE: delta_a * transition_weight.
double transition_contribution(const LevelOutcome& prev, const LevelOutcome& next,
                               std::size_t next_level_index = 1);

SampleScore arise_sample(const SampleTrajectory& trajectory);

/// Mean of per-sample scores. All trajectories must share one level count.
double arise_aggregate(std::span<const SampleTrajectory> trajectories);

struct CurvePoint {
  double mean_tokens = 0.0;
  double mean_accuracy = 0.0;
};

/// Dataset-level (mean tokens, mean accuracy) per scaling level.
///
/// At least two points; token coordinates pairwise distinct.
class ScalingCurve {
 public:
  /// Throws ArgumentError for fewer than two points, CurveError on duplicate tokens,
  /// DomainError for out-of-range coordinates.
  static ScalingCurve from_points(std::vector<CurvePoint> points);

  const std::vector<CurvePoint>& points() const noexcept { return points_; }
  std::size_t size() const noexcept { return points_.size(); }

  /// Smallest token gap over all point pairs.
  double min_token_gap() const;

 private:
  explicit ScalingCurve(std::vector<CurvePoint> points) : points_(std::move(points)) {}
  std::vector<CurvePoint> points_;
};

/// Coordinate-wise means across samples at each level.
ScalingCurve build_scaling_curve(std::span<const SampleTrajectory> trajectories);

/// Average accuracy-over-token gradient across all point pairs of the curve.
double scaling_metric(const ScalingCurve& curve);

/// Per-sample correct/incorrect flips between two adjacent levels.
struct TransitionMatrix {
  std::size_t from_level = 0;
  std::size_t stay_correct = 0;
  std::size_t degrade = 0;  // correct -> incorrect
  std::size_t improve = 0;  // incorrect -> correct
  std::size_t stay_incorrect = 0;

  std::size_t total() const noexcept {
    return stay_correct + degrade + improve + stay_incorrect;
  }
};

inline constexpr double kDefaultCorrectThreshold = 0.5;

/// Counts transitions between `from_level` and `from_level + 1`. A level counts
/// as correct when its accuracy is >= `threshold`.
TransitionMatrix transition_matrix(std::span<const SampleTrajectory> trajectories,
                                   std::size_t from_level,
                                   double threshold = kDefaultCorrectThreshold);

}  // namespace arise
