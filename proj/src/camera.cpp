#include "rcnet/camera.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Dense>

namespace rcnet {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

Eigen::Matrix3d rot_y(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, 0, s, 0, 1, 0, -s, 0, c;
  return m;
}
Eigen::Matrix3d rot_y_d(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, 0, c, 0, 0, 0, -c, 0, -s;
  return m;
}
Eigen::Matrix3d rot_x(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 1, 0, 0, 0, c, -s, 0, s, c;
  return m;
}
Eigen::Matrix3d rot_x_d(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << 0, 0, 0, 0, -s, -c, 0, c, -s;
  return m;
}
Eigen::Matrix3d rot_z(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << c, -s, 0, s, c, 0, 0, 0, 1;
  return m;
}
Eigen::Matrix3d rot_z_d(double a) {
  const double c = std::cos(a), s = std::sin(a);
  Eigen::Matrix3d m;
  m << -s, -c, 0, c, -s, 0, 0, 0, 0;
  return m;
}

double wrap(double x, double lo) {
  double y = std::fmod(x - lo, kTwoPi);
  if (y < 0) y += kTwoPi;
  if (y >= kTwoPi) y = 0.0;
  return lo + y;
}

std::vector<double> band_centers(int n, double lo, double hi) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) out[k] = lo + (k + 0.5) * (hi - lo) / n;
  return out;
}

inline int round_half_up(double x) { return static_cast<int>(std::floor(x + 0.5)); }

}  // namespace

void Pose::validate() const {
  if (!std::isfinite(azimuth) || !std::isfinite(elevation) || !std::isfinite(theta) ||
      !std::isfinite(distance)) {
    throw InvalidArgument("pose has non-finite fields");
  }
  if (!(distance > 0.0)) throw InvalidArgument("pose distance must be positive");
}

Pose canonical(Pose p) {
  p.azimuth = wrap(p.azimuth, 0.0);
  p.theta = wrap(p.theta, -std::numbers::pi);
  p.elevation = std::clamp(p.elevation, -std::numbers::pi / 2, std::numbers::pi / 2);
  return p;
}

void CameraIntrinsics::validate() const {
  if (!(focal > 0.0) || !std::isfinite(focal)) throw InvalidArgument("focal length must be positive");
  if (height < 1 || width < 1) throw InvalidArgument("camera grid must be at least 1x1");
  if (!std::isfinite(u0) || !std::isfinite(v0)) throw InvalidArgument("principal point not finite");
}

CameraIntrinsics CameraIntrinsics::centered(double focal, int height, int width) {
  return {focal, (width - 1) / 2.0, (height - 1) / 2.0, height, width};
}

CameraIntrinsics CameraIntrinsics::upsampled(int factor) const {
  if (factor < 1) throw InvalidArgument("upsampling factor must be >= 1");
  const double shift = (factor - 1) / 2.0;
  return {focal * factor, u0 * factor + shift, v0 * factor + shift, height * factor, width * factor};
}

Eigen::Matrix3d rotation_from_pose(const Pose& pose) {
  return rot_z(pose.theta) * rot_x(pose.elevation) * rot_y(pose.azimuth);
}

RotationJacobian rotation_jacobian(const Pose& pose) {
  const Eigen::Matrix3d ry = rot_y(pose.azimuth), rx = rot_x(pose.elevation), rz = rot_z(pose.theta);
  RotationJacobian j;
  j.r = rz * rx * ry;
  j.d_azimuth = rz * rx * rot_y_d(pose.azimuth);
  j.d_elevation = rz * rot_x_d(pose.elevation) * ry;
  j.d_theta = rot_z_d(pose.theta) * rx * ry;
  return j;
}

Eigen::Vector3d camera_center(const Eigen::Matrix3d& r, double distance) {
  return -distance * r.row(2).transpose();
}

std::optional<double> ray_cuboid_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                       const Extents& extents) {
  double t_enter = -std::numeric_limits<double>::infinity();
  double t_exit = std::numeric_limits<double>::infinity();
  for (int a = 0; a < 3; ++a) {
    const double half = extents[a] / 2.0;
    if (dir[a] == 0.0) {
      if (origin[a] < -half || origin[a] > half) return std::nullopt;
      continue;
    }
    double t0 = (-half - origin[a]) / dir[a];
    double t1 = (half - origin[a]) / dir[a];
    if (t0 > t1) std::swap(t0, t1);
    t_enter = std::max(t_enter, t0);
    t_exit = std::min(t_exit, t1);
  }
  if (t_enter > t_exit || t_exit < 0.0) return std::nullopt;
  return std::max(t_enter, 0.0);
}

ProjectedMesh project(std::span<const Eigen::Vector3d> vertices, const Extents& extents,
                      const Pose& pose, const CameraIntrinsics& cam) {
  pose.validate();
  cam.validate();
  const Eigen::Matrix3d r = rotation_from_pose(pose);
  const Eigen::Vector3d eye = camera_center(r, pose.distance);
  const bool eye_inside = std::abs(eye[0]) < extents[0] / 2 && std::abs(eye[1]) < extents[1] / 2 &&
                          std::abs(eye[2]) < extents[2] / 2;

  ProjectedMesh out;
  out.height = cam.height;
  out.width = cam.width;
  const std::size_t n = vertices.size();
  out.pixel.resize(n);
  out.depth.resize(n);
  out.visible.assign(n, 0);
  const double u_max = cam.width - 1, v_max = cam.height - 1;

  for (std::size_t k = 0; k < n; ++k) {
    const Eigen::Vector3d xc = r * vertices[k] + Eigen::Vector3d(0, 0, pose.distance);
    out.depth[k] = xc.z();
    if (xc.z() <= 0.0) {
      out.pixel[k] = {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
      continue;
    }
    const double u = cam.focal * xc.x() / xc.z() + cam.u0;
    const double v = cam.focal * xc.y() / xc.z() + cam.v0;
    out.pixel[k] = {u, v};
    if (eye_inside || u < 0.0 || v < 0.0 || u > u_max || v > v_max) continue;
    // Visible iff the camera ray first meets the cuboid at the vertex itself.
    const auto entry = ray_cuboid_entry(eye, vertices[k] - eye, extents);
    if (entry && *entry >= 1.0 - 1e-9) {
      out.visible[k] = 1;
      ++out.visible_count;
    }
  }

  const std::size_t cells = out.cell_count();
  out.foreground.assign(cells, 0);
  out.correspondence.assign(cells, -1);
  if (out.visible_count == 0) return out;

  // Bucket visible vertices by their rounded cell (CSR layout).
  std::vector<std::int32_t> bucket_start(cells + 1, 0);
  std::vector<std::int32_t> owner(n, -1);
  for (std::size_t k = 0; k < n; ++k) {
    if (!out.visible[k]) continue;
    const int x = std::clamp(round_half_up(out.pixel[k].x()), 0, cam.width - 1);
    const int y = std::clamp(round_half_up(out.pixel[k].y()), 0, cam.height - 1);
    owner[k] = y * cam.width + x;
    ++bucket_start[owner[k] + 1];
  }
  for (std::size_t c = 0; c < cells; ++c) bucket_start[c + 1] += bucket_start[c];
  std::vector<std::int32_t> bucket(out.visible_count);
  {
    std::vector<std::int32_t> fill(bucket_start.begin(), bucket_start.end() - 1);
    for (std::size_t k = 0; k < n; ++k) {
      if (owner[k] >= 0) bucket[fill[owner[k]]++] = static_cast<std::int32_t>(k);
    }
  }

  for (std::size_t k = 0; k < n; ++k) {
    if (!out.visible[k]) continue;
    const double u = out.pixel[k].x(), v = out.pixel[k].y();
    const int x0 = std::max(0, static_cast<int>(std::ceil(u - 0.5)));
    const int x1 = std::min(cam.width - 1, static_cast<int>(std::floor(u + 0.5)));
    const int y0 = std::max(0, static_cast<int>(std::ceil(v - 0.5)));
    const int y1 = std::min(cam.height - 1, static_cast<int>(std::floor(v + 0.5)));
    for (int y = y0; y <= y1; ++y) {
      for (int x = x0; x <= x1; ++x) out.foreground[static_cast<std::size_t>(y) * cam.width + x] = 1;
    }
  }

  // Any vertex within the one-cell square of a cell centre lies in the 3x3
  // bucket neighbourhood, so this nearest search is exact.
  for (int y = 0; y < cam.height; ++y) {
    for (int x = 0; x < cam.width; ++x) {
      const std::size_t cell = static_cast<std::size_t>(y) * cam.width + x;
      if (!out.foreground[cell]) continue;
      ++out.foreground_count;
      double best = std::numeric_limits<double>::infinity();
      std::int32_t best_k = -1;
      for (int by = std::max(0, y - 1); by <= std::min(cam.height - 1, y + 1); ++by) {
        for (int bx = std::max(0, x - 1); bx <= std::min(cam.width - 1, x + 1); ++bx) {
          const std::size_t b = static_cast<std::size_t>(by) * cam.width + bx;
          for (std::int32_t s = bucket_start[b]; s < bucket_start[b + 1]; ++s) {
            const std::int32_t k = bucket[s];
            const double du = out.pixel[k].x() - x, dv = out.pixel[k].y() - y;
            const double d2 = du * du + dv * dv;
            if (d2 < best || (d2 == best && k < best_k)) {
              best = d2;
              best_k = k;
            }
          }
        }
      }
      out.correspondence[cell] = best_k;
    }
  }
  return out;
}

ProjectedMesh project(const NeuralMeshModel& mesh, const Pose& pose, const CameraIntrinsics& cam) {
  return project(mesh.vertices, mesh.extents, pose, cam);
}

std::vector<Pose> pose_grid(int n_azimuth, int n_elevation, int n_theta, double distance,
                            const PoseBands& bands) {
  if (n_azimuth < 1 || n_elevation < 1 || n_theta < 1) {
    throw InvalidArgument("pose grid counts must be >= 1");
  }
  if (!(distance > 0.0)) throw InvalidArgument("pose grid distance must be positive");
  const auto az = band_centers(n_azimuth, 0.0, kTwoPi);
  const auto el = band_centers(n_elevation, bands.elevation_lo, bands.elevation_hi);
  const auto th = band_centers(n_theta, bands.theta_lo, bands.theta_hi);
  std::vector<Pose> out;
  out.reserve(static_cast<std::size_t>(n_azimuth) * n_elevation * n_theta);
  for (double a : az) {
    for (double e : el) {
      for (double t : th) out.push_back({a, e, t, distance});
    }
  }
  return out;
}

std::vector<Pose> pose_grid(const PoseGridShape& shape, double distance, const PoseBands& bands) {
  return pose_grid(shape.azimuths, shape.elevations, shape.thetas, distance, bands);
}

int nearest_pose_bin(const Pose& pose, const PoseGridShape& shape, const PoseBands& bands) {
  auto nearest = [](double x, int n, double lo, double hi) {
    const double step = (hi - lo) / n;
    return std::clamp(static_cast<int>(std::floor((x - lo) / step)), 0, n - 1);
  };
  const Pose p = canonical(pose);
  const int ia = nearest(p.azimuth, shape.azimuths, 0.0, kTwoPi);
  const int ie = nearest(p.elevation, shape.elevations, bands.elevation_lo, bands.elevation_hi);
  const int it = nearest(p.theta, shape.thetas, bands.theta_lo, bands.theta_hi);
  return (ia * shape.elevations + ie) * shape.thetas + it;
}

bool is_rotation(const Eigen::Matrix3d& r, double tolerance) {
  if (!r.allFinite()) return false;
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  return ortho <= tolerance && std::abs(r.determinant() - 1.0) <= tolerance;
}

double pose_error(const Eigen::Matrix3d& r_pred, const Eigen::Matrix3d& r_gt) {
  if (!is_rotation(r_pred) || !is_rotation(r_gt)) {
    throw InvalidArgument("pose_error requires proper rotation matrices");
  }
  const Eigen::Matrix3d a = r_pred.transpose() * r_gt;
  const double c = std::clamp((a.trace() - 1.0) / 2.0, -1.0, 1.0);
  const Eigen::Vector3d axis(a(2, 1) - a(1, 2), a(0, 2) - a(2, 0), a(1, 0) - a(0, 1));
  const double s = std::min(1.0, axis.norm() / 2.0);
  return std::atan2(s, c);
}

}  // namespace rcnet
