#include "arise/metric.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "arise/errors.hpp"

namespace arise {

namespace {

void require_consistent(std::span<const SampleTrajectory> trajectories, const char* what) {
  if (trajectories.empty()) {
    throw ArgumentError(std::string(what) + ": no trajectories");
  }
  const std::size_t levels = trajectories.front().levels.size();
  for (const auto& t : trajectories) {
    if (t.levels.size() != levels) {
      throw ArgumentError(std::string(what) + ": sample '" + t.sample_id + "' has " +
                          std::to_string(t.levels.size()) + " levels, expected " +
                          std::to_string(levels));
    }
  }
}

}  // namespace

void validate_outcome(const LevelOutcome& outcome, std::size_t level_index) {
  if (!(outcome.tokens > 0.0) || !std::isfinite(outcome.tokens)) {
    throw DomainError("level " + std::to_string(level_index) +
                          ": tokens must be positive and finite, got " +
                          std::to_string(outcome.tokens),
                      level_index);
  }
  if (!(outcome.accuracy >= 0.0 && outcome.accuracy <= 1.0)) {
    throw DomainError("level " + std::to_string(level_index) +
                          ": accuracy must lie in [0, 1], got " +
                          std::to_string(outcome.accuracy),
                      level_index);
  }
}

double transition_weight(const LevelOutcome& prev, const LevelOutcome& next,
                         std::size_t next_level_index) {
  validate_outcome(prev, next_level_index == 0 ? 0 : next_level_index - 1);
  validate_outcome(next, next_level_index);
  const double delta = next.accuracy - prev.accuracy;
  if (delta > 0.0) return prev.tokens / next.tokens;
  if (delta < 0.0) return next.tokens / prev.tokens;
  return 1.0;
}

double transition_contribution(const LevelOutcome& prev, const LevelOutcome& next,
                               std::size_t next_level_index) {
  const double weight = transition_weight(prev, next, next_level_index);
  return (next.accuracy - prev.accuracy) * weight;
}

SampleScore arise_sample(const SampleTrajectory& trajectory) {
  const auto& levels = trajectory.levels;
  if (levels.size() < 2) {
    throw ArgumentError("sample '" + trajectory.sample_id +
                        "': trajectory needs at least 2 levels, got " +
                        std::to_string(levels.size()));
  }
  SampleScore result;
  for (std::size_t j = 1; j < levels.size(); ++j) {
    const LevelOutcome& prev = levels[j - 1];
    const LevelOutcome& next = levels[j];
    result.score += transition_contribution(prev, next, j);
    if (next.tokens <= prev.tokens) result.diagnostics.non_monotone_tokens = true;
    if (next.accuracy > prev.accuracy) {
      ++result.diagnostics.transitions.improve;
    } else if (next.accuracy < prev.accuracy) {
      ++result.diagnostics.transitions.degrade;
    } else {
      ++result.diagnostics.transitions.unchanged;
    }
  }
  return result;
}

double arise_aggregate(std::span<const SampleTrajectory> trajectories) {
  require_consistent(trajectories, "arise_aggregate");
  double sum = 0.0;
  for (const auto& t : trajectories) sum += arise_sample(t).score;
  return sum / static_cast<double>(trajectories.size());
}

ScalingCurve ScalingCurve::from_points(std::vector<CurvePoint> points) {
  if (points.size() < 2) {
    throw ArgumentError("scaling curve needs at least 2 points, got " +
                        std::to_string(points.size()));
  }
  for (std::size_t j = 0; j < points.size(); ++j) {
    validate_outcome({points[j].mean_accuracy, points[j].mean_tokens}, j);
  }
  for (std::size_t a = 0; a < points.size(); ++a) {
    for (std::size_t b = a + 1; b < points.size(); ++b) {
      if (points[a].mean_tokens == points[b].mean_tokens) {
        throw CurveError("scaling curve levels " + std::to_string(a) + " and " +
                         std::to_string(b) + " share mean tokens " +
                         std::to_string(points[a].mean_tokens));
      }
    }
  }
  return ScalingCurve(std::move(points));
}

double ScalingCurve::min_token_gap() const {
  double gap = std::numeric_limits<double>::infinity();
  for (std::size_t a = 0; a < points_.size(); ++a) {
    for (std::size_t b = a + 1; b < points_.size(); ++b) {
      gap = std::min(gap, std::abs(points_[a].mean_tokens - points_[b].mean_tokens));
    }
  }
  return gap;
}

ScalingCurve build_scaling_curve(std::span<const SampleTrajectory> trajectories) {
  require_consistent(trajectories, "build_scaling_curve");
  const std::size_t levels = trajectories.front().levels.size();
  const double n = static_cast<double>(trajectories.size());
  std::vector<CurvePoint> points(levels);
  for (std::size_t j = 0; j < levels; ++j) {
    double tokens = 0.0;
    double accuracy = 0.0;
    for (const auto& t : trajectories) {
      tokens += t.levels[j].tokens;
      accuracy += t.levels[j].accuracy;
    }
    points[j] = {tokens / n, accuracy / n};
  }
  return ScalingCurve::from_points(std::move(points));
}

double scaling_metric(const ScalingCurve& curve) {
  const auto& p = curve.points();
  double sum = 0.0;
  for (std::size_t a = 0; a < p.size(); ++a) {
    for (std::size_t b = a + 1; b < p.size(); ++b) {
      // Orient each unordered pair so that the token difference is positive.
      const CurvePoint& lo = p[a].mean_tokens < p[b].mean_tokens ? p[a] : p[b];
      const CurvePoint& hi = p[a].mean_tokens < p[b].mean_tokens ? p[b] : p[a];
      sum += (hi.mean_accuracy - lo.mean_accuracy) / (hi.mean_tokens - lo.mean_tokens);
    }
  }
  const double n = static_cast<double>(p.size());
  const double pairs = n * (n - 1.0) / 2.0;
  return sum / pairs;
}

TransitionMatrix transition_matrix(std::span<const SampleTrajectory> trajectories,
                                   std::size_t from_level, double threshold) {
  require_consistent(trajectories, "transition_matrix");
  const std::size_t levels = trajectories.front().levels.size();
  if (from_level + 1 >= levels) {
    throw ArgumentError("transition_matrix: level pair (" + std::to_string(from_level) +
                        ", " + std::to_string(from_level + 1) + ") out of range for " +
                        std::to_string(levels) + " levels");
  }
  TransitionMatrix m;
  m.from_level = from_level;
  for (const auto& t : trajectories) {
    const bool before = t.levels[from_level].accuracy >= threshold;
    const bool after = t.levels[from_level + 1].accuracy >= threshold;
    if (before && after) {
      ++m.stay_correct;
    } else if (before) {
      ++m.degrade;
    } else if (after) {
      ++m.improve;
    } else {
      ++m.stay_incorrect;
    }
  }
  return m;
}

}  // namespace arise
