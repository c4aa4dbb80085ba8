#pragma once

#include <Eigen/Core>
#include <optional>
#include <span>
#include <vector>

#include "stripeid/match_set.hpp"

namespace stripeid {

/// Lower-triangular affine frame A = [[a, 0], [b, c]] mapping the unit circle
/// onto a feature's elliptical region (pixel units). Orientation is fixed by
/// the triangular form, which is what makes the frame gravity-aligned.
struct AffineShape {
  float a = 1.0f;
  float b = 0.0f;
  float c = 1.0f;

  bool valid() const noexcept { return a > 0.0f && c > 0.0f; }
  double det() const noexcept { return static_cast<double>(a) * c; }
  Eigen::Matrix2d matrix() const;

  /// Lower-triangular factor of a symmetric positive-definite ellipse
  /// covariance S = A A^T.
  static AffineShape from_covariance(const Eigen::Matrix2d& covariance);

  friend bool operator==(const AffineShape&, const AffineShape&) = default;
};

/// Keypoint location, elliptical shape, and orientation (always 0).
struct EllipseKeypoint {
  float x = 0.0f;
  float y = 0.0f;
  AffineShape shape;
  float theta = 0.0f;

  Eigen::Vector2d position() const { return {x, y}; }

  friend bool operator==(const EllipseKeypoint&, const EllipseKeypoint&) = default;
};

/// Affine map from query-image coordinates into database-image coordinates.
struct AffineHypothesis {
  Eigen::Matrix2d linear = Eigen::Matrix2d::Identity();
  Eigen::Vector2d translation = Eigen::Vector2d::Zero();

  Eigen::Vector2d apply(const Eigen::Vector2d& p) const { return linear * p + translation; }
};

/// Projective map, normalized so h(2,2) == 1 whenever it is nonzero.
struct Homography {
  Eigen::Matrix3d h = Eigen::Matrix3d::Identity();

  /// Empty when the point maps to infinity.
  std::optional<Eigen::Vector2d> apply(const Eigen::Vector2d& p) const;
};

struct PointPair {
  Eigen::Vector2d from;  // query image
  Eigen::Vector2d to;    // database image
};

/// Hypothesis induced by one correspondence: the query frame is mapped onto
/// the database frame, H = A_db * A_q^-1, and kp_q.x lands exactly on kp_db.x.
/// Throws kInvalidShape for degenerate frames.
AffineHypothesis affine_hypothesis(const EllipseKeypoint& kp_db, const EllipseKeypoint& kp_q);

/// Indices (into `matches`) whose projected query location lies strictly
/// within `t_sp` pixels of the matching database location.
std::vector<std::size_t> count_inliers(const AffineHypothesis& hyp,
                                       std::span<const MatchTriple> matches,
                                       std::span<const EllipseKeypoint> kps_db,
                                       std::span<const EllipseKeypoint> kps_q, double t_sp);
std::vector<std::size_t> count_inliers(const Homography& hyp,
                                       std::span<const MatchTriple> matches,
                                       std::span<const EllipseKeypoint> kps_db,
                                       std::span<const EllipseKeypoint> kps_q, double t_sp);

/// Least-squares homography (from -> to) by the normalized direct linear
/// transform. Throws kEstimationFailed for fewer than 4 pairs or a
/// rank-deficient (e.g. collinear) configuration.
Homography estimate_homography(std::span<const PointPair> correspondences);

}  // namespace stripeid
