#include "semidense/pnp.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>
#include <numeric>

#include "semidense/error.hpp"
#include "semidense/random.hpp"

namespace semidense {
namespace {

constexpr double kFlatRatio = 1e-10;

struct Pca {
  Eigen::Vector3d mean;
  Eigen::Vector3d values;  // descending
  Eigen::Matrix3d axes;    // columns, matching values
};

Pca principal_axes(const Eigen::Matrix3Xd& X) {
  Pca p;
  p.mean = X.rowwise().mean();
  const Eigen::Matrix3Xd c = X.colwise() - p.mean;
  const Eigen::Matrix3d cov = c * c.transpose() / static_cast<double>(X.cols());
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(cov);
  for (int i = 0; i < 3; ++i) {
    p.values(i) = std::max(es.eigenvalues()(2 - i), 0.0);
    p.axes.col(i) = es.eigenvectors().col(2 - i);
  }
  if (p.axes.determinant() < 0) p.axes.col(2) = -p.axes.col(2);
  return p;
}

Eigen::Matrix2Xd normalize_pixels(const Eigen::Matrix2Xd& u, const Camerad& k) {
  Eigen::Matrix2Xd m(2, u.cols());
  m.row(0) = (u.row(0).array() - k.cx) / k.fx;
  m.row(1) = (u.row(1).array() - k.cy) / k.fy;
  return m;
}

// Rigid transform mapping a onto b in the least-squares sense.
SE3d procrustes(const Eigen::Matrix3Xd& a, const Eigen::Matrix3Xd& b) {
  const Eigen::Vector3d ma = a.rowwise().mean();
  const Eigen::Vector3d mb = b.rowwise().mean();
  const Eigen::Matrix3d h = (b.colwise() - mb) * (a.colwise() - ma).transpose();
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
  const Eigen::Matrix3d r = svd.matrixU() * d * svd.matrixV().transpose();
  return SE3d(r, mb - r * ma);
}

double sum_sq_error(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& m, const SE3d& pose) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const Eigen::Vector3d pc = pose * Eigen::Vector3d(X.col(i));
    if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
    s += (pc.head<2>() / pc.z() - m.col(i)).squaredNorm();
  }
  return s;
}

class EpnpSolver {
 public:
  EpnpSolver(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& m, const Pca& pca) : X_(X), m_(m) {
    const int n = static_cast<int>(X.cols());
    cw_.col(0) = pca.mean;
    for (int i = 0; i < 3; ++i) cw_.col(i + 1) = pca.mean + std::sqrt(pca.values(i)) * pca.axes.col(i);
    Eigen::Matrix3d basis;
    for (int i = 0; i < 3; ++i) basis.col(i) = cw_.col(i + 1) - cw_.col(0);
    const Eigen::Matrix3Xd b = basis.inverse() * (X.colwise() - cw_.col(0));
    alphas_.resize(4, n);
    alphas_.row(0) = 1.0 - b.colwise().sum().array();
    alphas_.bottomRows<3>() = b;

    Eigen::MatrixXd M(2 * n, 12);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < 4; ++j) {
        const double a = alphas_(j, i);
        M.block<1, 3>(2 * i, 3 * j) << a, 0.0, -a * m(0, i);
        M.block<1, 3>(2 * i + 1, 3 * j) << 0.0, a, -a * m(1, i);
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::Matrix<double, 12, 12>> es(M.transpose() * M);
    for (int i = 0; i < 4; ++i) v_[i] = es.eigenvectors().col(i);  // ascending eigenvalues

    // Pairwise control-point differences in the null-space basis.
    const std::array<std::pair<int, int>, 6> pairs{{{0, 1}, {0, 2}, {0, 3}, {1, 2}, {1, 3}, {2, 3}}};
    for (int r = 0; r < 6; ++r) {
      const auto [a, c] = pairs[r];
      std::array<Eigen::Vector3d, 4> dv;
      for (int i = 0; i < 4; ++i) dv[i] = v_[i].segment<3>(3 * a) - v_[i].segment<3>(3 * c);
      L_.row(r) << dv[0].dot(dv[0]), 2 * dv[0].dot(dv[1]), dv[1].dot(dv[1]), 2 * dv[0].dot(dv[2]),
          2 * dv[1].dot(dv[2]), dv[2].dot(dv[2]), 2 * dv[0].dot(dv[3]), 2 * dv[1].dot(dv[3]),
          2 * dv[2].dot(dv[3]), dv[3].dot(dv[3]);
      rho_(r) = (cw_.col(a) - cw_.col(c)).squaredNorm();
    }
  }

  SE3d solve() const {
    SE3d best;
    double best_err = std::numeric_limits<double>::infinity();
    for (int mode = 1; mode <= 3; ++mode) {
      Eigen::Vector4d betas = approximate(mode);
      refine_betas(betas);
      const SE3d pose = pose_from_betas(betas);
      const double err = sum_sq_error(X_, m_, pose);
      if (err < best_err) {
        best_err = err;
        best = pose;
      }
    }
    if (!std::isfinite(best_err)) throw Error(ErrorCode::kDegenerate, "EPnP found no pose in front of the camera");
    return best;
  }

 private:
  Eigen::Vector4d approximate(int mode) const {
    Eigen::Vector4d betas = Eigen::Vector4d::Zero();
    if (mode == 1) {
      Eigen::Matrix<double, 6, 4> l;
      l << L_.col(0), L_.col(1), L_.col(3), L_.col(6);
      const Eigen::Vector4d b = l.colPivHouseholderQr().solve(rho_);
      const double s = b(0) < 0 ? -1.0 : 1.0;
      betas(0) = std::sqrt(std::abs(b(0)));
      if (betas(0) > 0) betas.tail<3>() = s * b.tail<3>() / betas(0);
    } else {
      const int cols = mode == 2 ? 3 : 5;
      const Eigen::VectorXd b = L_.leftCols(cols).colPivHouseholderQr().solve(rho_);
      if (b(0) < 0) {
        betas(0) = std::sqrt(-b(0));
        betas(1) = b(2) < 0 ? std::sqrt(-b(2)) : 0.0;
      } else {
        betas(0) = std::sqrt(b(0));
        betas(1) = b(2) > 0 ? std::sqrt(b(2)) : 0.0;
      }
      if (b(1) < 0) betas(0) = -betas(0);
      if (mode == 3 && betas(0) != 0.0) betas(2) = b(3) / betas(0);
    }
    return betas;
  }

  void refine_betas(Eigen::Vector4d& b) const {
    for (int it = 0; it < 5; ++it) {
      Eigen::Matrix<double, 6, 4> J;
      Eigen::Matrix<double, 6, 1> r;
      for (int i = 0; i < 6; ++i) {
        const auto l = L_.row(i);
        J(i, 0) = 2 * l(0) * b(0) + l(1) * b(1) + l(3) * b(2) + l(6) * b(3);
        J(i, 1) = l(1) * b(0) + 2 * l(2) * b(1) + l(4) * b(2) + l(7) * b(3);
        J(i, 2) = l(3) * b(0) + l(4) * b(1) + 2 * l(5) * b(2) + l(8) * b(3);
        J(i, 3) = l(6) * b(0) + l(7) * b(1) + l(8) * b(2) + 2 * l(9) * b(3);
        r(i) = rho_(i) - (l(0) * b(0) * b(0) + l(1) * b(0) * b(1) + l(2) * b(1) * b(1) + l(3) * b(0) * b(2) +
                          l(4) * b(1) * b(2) + l(5) * b(2) * b(2) + l(6) * b(0) * b(3) + l(7) * b(1) * b(3) +
                          l(8) * b(2) * b(3) + l(9) * b(3) * b(3));
      }
      b += J.colPivHouseholderQr().solve(r);
    }
  }

  SE3d pose_from_betas(const Eigen::Vector4d& b) const {
    Eigen::Matrix<double, 12, 1> x = Eigen::Matrix<double, 12, 1>::Zero();
    for (int i = 0; i < 4; ++i) x += b(i) * v_[i];
    Eigen::Matrix<double, 3, 4> cc;
    for (int i = 0; i < 4; ++i) cc.col(i) = x.segment<3>(3 * i);
    Eigen::Matrix3Xd pc = cc * alphas_;
    if (pc.row(2).sum() < 0) pc = -pc;
    return procrustes(X_, pc);
  }

  const Eigen::Matrix3Xd& X_;
  const Eigen::Matrix2Xd& m_;
  Eigen::Matrix<double, 3, 4> cw_;
  Eigen::Matrix4Xd alphas_;
  std::array<Eigen::Matrix<double, 12, 1>, 4> v_;
  Eigen::Matrix<double, 6, 10> L_;
  Eigen::Matrix<double, 6, 1> rho_;
};

// Points on a plane: DLT homography from in-plane coordinates to normalised
// image coordinates, then decomposition into rotation and translation.
SE3d planar_pose(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& m, const Pca& pca) {
  const int n = static_cast<int>(X.cols());
  Eigen::Matrix2Xd p = (pca.axes.leftCols<2>().transpose() * (X.colwise() - pca.mean));

  auto similarity = [](const Eigen::Matrix2Xd& q) {
    const Eigen::Vector2d c = q.rowwise().mean();
    const double d = (q.colwise() - c).colwise().norm().mean();
    const double s = d > 0 ? std::sqrt(2.0) / d : 1.0;
    Eigen::Matrix3d t;
    t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    return t;
  };
  const Eigen::Matrix3d tp = similarity(p);
  const Eigen::Matrix3d tm = similarity(m);

  Eigen::MatrixXd A(2 * n, 9);
  for (int i = 0; i < n; ++i) {
    const Eigen::Vector3d a = tp * p.col(i).homogeneous();
    const Eigen::Vector3d b = tm * m.col(i).homogeneous();
    A.row(2 * i) << 0, 0, 0, -b.z() * a.transpose(), b.y() * a.transpose();
    A.row(2 * i + 1) << b.z() * a.transpose(), 0, 0, 0, -b.x() * a.transpose();
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d H;
  H << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  H = tm.inverse() * H * tp;

  const double scale = 2.0 / (H.col(0).norm() + H.col(1).norm());
  H *= scale;
  if (H(2, 2) < 0) H = -H;  // the plane origin lies in front of the camera
  Eigen::Matrix3d r;
  r.col(0) = H.col(0);
  r.col(1) = H.col(1);
  r.col(2) = H.col(0).cross(H.col(1));
  Eigen::JacobiSVD<Eigen::Matrix3d> rs(r, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((rs.matrixU() * rs.matrixV().transpose()).determinant() < 0) d(2, 2) = -1;
  r = rs.matrixU() * d * rs.matrixV().transpose();
  const Eigen::Matrix3d rw = r * pca.axes.transpose();
  return SE3d(rw, H.col(2) - rw * pca.mean);
}

}  // namespace

SE3d epnp(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera) {
  if (X.cols() != u.cols()) throw Error(ErrorCode::kArgument, "point and pixel counts differ");
  if (X.cols() < 4) throw Error(ErrorCode::kArgument, "PnP needs at least 4 correspondences");
  if (!X.allFinite() || !u.allFinite()) throw Error(ErrorCode::kNumeric, "non-finite PnP input");
  camera.validate();
  const Pca pca = principal_axes(X);
  if (!(pca.values(0) > 0) || pca.values(1) / pca.values(0) < kFlatRatio) {
    throw Error(ErrorCode::kDegenerate, "PnP points are collinear");
  }
  const Eigen::Matrix2Xd m = normalize_pixels(u, camera);
  if (pca.values(2) / pca.values(0) < kFlatRatio) return planar_pose(X, m, pca);
  return EpnpSolver(X, m, pca).solve();
}

Eigen::VectorXd reprojection_errors(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera,
                                    const SE3d& pose) {
  Eigen::VectorXd e(X.cols());
  for (Eigen::Index i = 0; i < X.cols(); ++i) {
    const Eigen::Vector3d pc = pose * Eigen::Vector3d(X.col(i));
    e(i) = pc.z() > kMinDepth ? (project_camera(camera, pc) - u.col(i)).norm()
                              : std::numeric_limits<double>::infinity();
  }
  return e;
}

SE3d refine_pose(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera, const SE3d& initial,
                 const std::vector<int>& indices, int max_iterations) {
  std::vector<int> idx = indices;
  if (idx.empty()) {
    idx.resize(static_cast<std::size_t>(X.cols()));
    std::iota(idx.begin(), idx.end(), 0);
  }
  auto cost = [&](const SE3d& pose) {
    double s = 0.0;
    for (int i : idx) {
      const Eigen::Vector3d pc = pose * Eigen::Vector3d(X.col(i));
      if (!(pc.z() > kMinDepth)) return std::numeric_limits<double>::infinity();
      s += (project_camera(camera, pc) - u.col(i)).squaredNorm();
    }
    return s;
  };

  SE3d pose = initial;
  double current = cost(pose);
  if (!std::isfinite(current)) return pose;
  double lambda = 1e-3;
  for (int it = 0; it < max_iterations; ++it) {
    Eigen::Matrix<double, 6, 6> H = Eigen::Matrix<double, 6, 6>::Zero();
    Eigen::Matrix<double, 6, 1> g = Eigen::Matrix<double, 6, 1>::Zero();
    for (int i : idx) {
      const Eigen::Vector3d rx = pose.rotation() * Eigen::Vector3d(X.col(i));
      const Eigen::Vector3d pc = rx + pose.translation();
      const Eigen::Matrix<double, 2, 3> jp = projection_jacobian(camera, pc);
      Eigen::Matrix3d skew;
      skew << 0, -rx.z(), rx.y(), rx.z(), 0, -rx.x(), -rx.y(), rx.x(), 0;
      Eigen::Matrix<double, 2, 6> J;
      J.leftCols<3>() = -jp * skew;
      J.rightCols<3>() = jp;
      const Eigen::Vector2d r = project_camera(camera, pc) - u.col(i);
      H += J.transpose() * J;
      g += J.transpose() * r;
    }
    bool improved = false;
    while (lambda < 1e12) {
      Eigen::Matrix<double, 6, 6> A = H;
      A.diagonal() *= 1.0 + lambda;
      const Eigen::Matrix<double, 6, 1> delta = -A.ldlt().solve(g);
      const SE3d trial(SE3d::so3_exp(delta.head<3>()) * pose.rotation(), pose.translation() + delta.tail<3>());
      const double c = cost(trial);
      if (c < current) {
        const double rel = (current - c) / std::max(current, 1e-300);
        pose = trial;
        current = c;
        lambda = std::max(lambda / 10.0, 1e-12);
        improved = rel > 1e-12;
        break;
      }
      lambda *= 10.0;
    }
    if (!improved) break;
  }
  return pose;
}

PnPResult ransac_pnp(const Eigen::Matrix3Xd& X, const Eigen::Matrix2Xd& u, const Camerad& camera,
                     const RansacOptions& options) {
  if (X.cols() != u.cols()) throw Error(ErrorCode::kArgument, "point and pixel counts differ");
  if (!(options.inlier_px > 0) || !(options.confidence > 0 && options.confidence < 1) || options.max_iterations < 1) {
    throw Error(ErrorCode::kArgument, "invalid RANSAC options");
  }
  PnPResult result;
  const auto n = static_cast<std::uint64_t>(X.cols());
  if (n < 4) return result;

  auto inliers_of = [&](const SE3d& pose, double* mean) {
    const Eigen::VectorXd e = reprojection_errors(X, u, camera, pose);
    std::vector<int> in;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < e.size(); ++i) {
      if (e(i) < options.inlier_px) {
        in.push_back(static_cast<int>(i));
        sum += e(i);
      }
    }
    if (mean) *mean = in.empty() ? std::numeric_limits<double>::infinity() : sum / static_cast<double>(in.size());
    return in;
  };

  CounterRng rng = make_rng(options.seed, Stream::kRansac, n);
  std::vector<int> best_inliers;
  double best_mean = std::numeric_limits<double>::infinity();
  SE3d best_pose;
  double needed = options.max_iterations;
  int it = 0;
  Eigen::Matrix3Xd xs(3, 4);
  Eigen::Matrix2Xd us(2, 4);
  for (; it < options.max_iterations && it < needed; ++it) {
    std::array<std::uint64_t, 4> s{};
    for (int k = 0; k < 4; ++k) {
      bool fresh = false;
      while (!fresh) {
        s[k] = rng.below(n);
        fresh = std::find(s.begin(), s.begin() + k, s[k]) == s.begin() + k;
      }
      xs.col(k) = X.col(static_cast<Eigen::Index>(s[k]));
      us.col(k) = u.col(static_cast<Eigen::Index>(s[k]));
    }
    SE3d pose;
    try {
      pose = epnp(xs, us, camera);
    } catch (const Error&) {
      continue;
    }
    double mean = 0.0;
    std::vector<int> in = inliers_of(pose, &mean);
    if (in.size() > best_inliers.size() || (in.size() == best_inliers.size() && mean < best_mean)) {
      best_inliers = std::move(in);
      best_mean = mean;
      best_pose = pose;
      const double w = static_cast<double>(best_inliers.size()) / static_cast<double>(n);
      const double miss = 1.0 - std::pow(w, 4);
      if (miss <= 0.0) {
        needed = 0;
      } else if (miss < 1.0) {
        needed = std::log(1.0 - options.confidence) / std::log(miss);
      }
    }
  }
  result.iterations = it;
  if (best_inliers.size() < 4) return result;

  // Refit on the consensus set until it stops changing.
  for (int round = 0; round < 5; ++round) {
    SE3d candidate = best_pose;
    Eigen::Matrix3Xd xi(3, static_cast<Eigen::Index>(best_inliers.size()));
    Eigen::Matrix2Xd ui(2, xi.cols());
    for (std::size_t k = 0; k < best_inliers.size(); ++k) {
      xi.col(static_cast<Eigen::Index>(k)) = X.col(best_inliers[k]);
      ui.col(static_cast<Eigen::Index>(k)) = u.col(best_inliers[k]);
    }
    try {
      const SE3d fit = epnp(xi, ui, camera);
      if (sum_sq_error(xi, normalize_pixels(ui, camera), fit) < sum_sq_error(xi, normalize_pixels(ui, camera), candidate)) {
        candidate = fit;
      }
    } catch (const Error&) {
    }
    candidate = refine_pose(X, u, camera, candidate, best_inliers);
    const Eigen::VectorXd old_e = reprojection_errors(xi, ui, camera, best_pose);
    const Eigen::VectorXd new_e = reprojection_errors(xi, ui, camera, candidate);
    if (!(new_e.mean() <= old_e.mean())) break;
    double mean = 0.0;
    std::vector<int> in = inliers_of(candidate, &mean);
    best_pose = candidate;
    const bool same = in == best_inliers;
    if (in.size() < 4) break;
    best_inliers = std::move(in);
    best_mean = mean;
    if (same) break;
  }

  best_inliers = inliers_of(best_pose, &best_mean);
  result.success = best_inliers.size() >= 4;
  result.pose = best_pose;
  result.inliers = std::move(best_inliers);
  result.mean_reprojection_px = best_mean;
  return result;
}

}  // namespace semidense
