#include "stripeid/geometry.hpp"

#include <Eigen/Dense>
#include <cmath>

#include "stripeid/error.hpp"

namespace stripeid {

Eigen::Matrix2d AffineShape::matrix() const {
  Eigen::Matrix2d m;
  m << a, 0.0, b, c;
  return m;
}

AffineShape AffineShape::from_covariance(const Eigen::Matrix2d& covariance) {
  const double s00 = covariance(0, 0);
  const double s10 = 0.5 * (covariance(1, 0) + covariance(0, 1));
  const double s11 = covariance(1, 1);
  if (!(s00 > 0.0)) throw Error(ErrorCode::kInvalidShape, "covariance not positive definite");
  const double a = std::sqrt(s00);
  const double b = s10 / a;
  const double rest = s11 - b * b;
  if (!(rest > 0.0)) throw Error(ErrorCode::kInvalidShape, "covariance not positive definite");
  return {static_cast<float>(a), static_cast<float>(b), static_cast<float>(std::sqrt(rest))};
}

std::optional<Eigen::Vector2d> Homography::apply(const Eigen::Vector2d& p) const {
  const Eigen::Vector3d q = h * p.homogeneous();
  if (std::abs(q.z()) < 1e-12) return std::nullopt;
  return q.hnormalized();
}

AffineHypothesis affine_hypothesis(const EllipseKeypoint& kp_db, const EllipseKeypoint& kp_q) {
  if (!kp_db.shape.valid() || !kp_q.shape.valid()) {
    throw Error(ErrorCode::kInvalidShape, "affine shape requires a > 0 and c > 0");
  }
  // Inverse of a lower-triangular frame stays lower-triangular.
  const double qa = kp_q.shape.a, qb = kp_q.shape.b, qc = kp_q.shape.c;
  Eigen::Matrix2d q_inv;
  q_inv << 1.0 / qa, 0.0, -qb / (qa * qc), 1.0 / qc;

  AffineHypothesis hyp;
  hyp.linear = kp_db.shape.matrix() * q_inv;
  hyp.translation = kp_db.position() - hyp.linear * kp_q.position();
  return hyp;
}

namespace {

template <class Project>
std::vector<std::size_t> inliers_by(Project&& project, std::span<const MatchTriple> matches,
                                    std::span<const EllipseKeypoint> kps_db,
                                    std::span<const EllipseKeypoint> kps_q, double t_sp) {
  std::vector<std::size_t> out;
  const double t_sq = t_sp * t_sp;
  for (std::size_t m = 0; m < matches.size(); ++m) {
    const auto& t = matches[m];
    const std::optional<Eigen::Vector2d> p = project(kps_q[t.query_index].position());
    if (!p) continue;
    if ((*p - kps_db[t.db_index].position()).squaredNorm() < t_sq) out.push_back(m);
  }
  return out;
}

// Similarity taking the centroid to the origin and the mean distance to sqrt(2).
Eigen::Matrix3d normalizing_transform(std::span<const PointPair> pairs, bool from_side) {
  Eigen::Vector2d centroid = Eigen::Vector2d::Zero();
  for (const auto& p : pairs) centroid += from_side ? p.from : p.to;
  centroid /= static_cast<double>(pairs.size());
  double mean_dist = 0.0;
  for (const auto& p : pairs) mean_dist += ((from_side ? p.from : p.to) - centroid).norm();
  mean_dist /= static_cast<double>(pairs.size());
  if (!(mean_dist > 0.0)) throw Error(ErrorCode::kEstimationFailed, "coincident points");
  const double s = std::sqrt(2.0) / mean_dist;
  Eigen::Matrix3d t;
  t << s, 0.0, -s * centroid.x(), 0.0, s, -s * centroid.y(), 0.0, 0.0, 1.0;
  return t;
}

}  // namespace

std::vector<std::size_t> count_inliers(const AffineHypothesis& hyp,
                                       std::span<const MatchTriple> matches,
                                       std::span<const EllipseKeypoint> kps_db,
                                       std::span<const EllipseKeypoint> kps_q, double t_sp) {
  return inliers_by(
      [&](const Eigen::Vector2d& p) { return std::optional<Eigen::Vector2d>(hyp.apply(p)); },
      matches, kps_db, kps_q, t_sp);
}

std::vector<std::size_t> count_inliers(const Homography& hyp,
                                       std::span<const MatchTriple> matches,
                                       std::span<const EllipseKeypoint> kps_db,
                                       std::span<const EllipseKeypoint> kps_q, double t_sp) {
  return inliers_by([&](const Eigen::Vector2d& p) { return hyp.apply(p); }, matches, kps_db,
                    kps_q, t_sp);
}

Homography estimate_homography(std::span<const PointPair> correspondences) {
  const std::size_t n = correspondences.size();
  if (n < 4) throw Error(ErrorCode::kEstimationFailed, "homography needs at least 4 pairs");

  const Eigen::Matrix3d t_from = normalizing_transform(correspondences, true);
  const Eigen::Matrix3d t_to = normalizing_transform(correspondences, false);

  const Eigen::Index rows = std::max<Eigen::Index>(static_cast<Eigen::Index>(2 * n), 9);
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(rows, 9);
  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d p = t_from * correspondences[k].from.homogeneous();
    const Eigen::Vector3d q = t_to * correspondences[k].to.homogeneous();
    const double x = p.x(), y = p.y(), u = q.x(), v = q.y();
    const auto r = static_cast<Eigen::Index>(2 * k);
    design.row(r) << -x, -y, -1.0, 0.0, 0.0, 0.0, u * x, u * y, u;
    design.row(r + 1) << 0.0, 0.0, 0.0, -x, -y, -1.0, v * x, v * y, v;
  }

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(design, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A unique solution needs a one-dimensional null space.
  if (!(sv(7) > 1e-9 * sv(0))) {
    throw Error(ErrorCode::kEstimationFailed, "rank-deficient correspondence configuration");
  }
  const Eigen::VectorXd sol = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << sol(0), sol(1), sol(2), sol(3), sol(4), sol(5), sol(6), sol(7), sol(8);

  Homography out;
  out.h = t_to.inverse() * hn * t_from;
  if (std::abs(out.h(2, 2)) > 1e-12) out.h /= out.h(2, 2);
  if (!(std::abs(out.h.determinant()) > 1e-12)) {
    throw Error(ErrorCode::kEstimationFailed, "singular homography");
  }
  return out;
}

}  // namespace stripeid
