#pragma once

#include <cstdint>
#include <numbers>
#include <optional>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "rcnet/mesh.hpp"

namespace rcnet {

// Camera on a sphere of radius `distance` around the object origin, looking
// at it. Camera frame: x right, y down, z forward.
struct Pose {
  double azimuth = 0.0;    // [0, 2pi)
  double elevation = 0.0;  // [-pi/2, pi/2]
  double theta = 0.0;      // in-plane, [-pi, pi)
  double distance = 1.0;

  void validate() const;
  friend bool operator==(const Pose&, const Pose&) = default;
};

// Wraps azimuth and theta into range and clamps elevation.
Pose canonical(Pose pose);

struct CameraIntrinsics {
  double focal = 1.0;
  double u0 = 0.0;
  double v0 = 0.0;
  int height = 1;
  int width = 1;

  void validate() const;
  // Principal point at the lattice centre.
  static CameraIntrinsics centered(double focal, int height, int width);
  // Same camera expressed on a lattice `factor` times finer, with cell
  // centres of the coarse lattice at the centres of factor x factor blocks.
  CameraIntrinsics upsampled(int factor) const;
};

// R = R_inplane(theta) * R_elev(elevation) * R_azim(azimuth).
Eigen::Matrix3d rotation_from_pose(const Pose& pose);

struct RotationJacobian {
  Eigen::Matrix3d r;
  Eigen::Matrix3d d_azimuth;
  Eigen::Matrix3d d_elevation;
  Eigen::Matrix3d d_theta;
};
RotationJacobian rotation_jacobian(const Pose& pose);

struct ProjectedMesh {
  int height = 0;
  int width = 0;
  std::vector<Eigen::Vector2d> pixel;  // continuous (u, v) lattice coordinates
  std::vector<double> depth;
  std::vector<std::uint8_t> visible;
  std::vector<std::uint8_t> foreground;      // H*W
  std::vector<std::int32_t> correspondence;  // H*W, -1 on background
  std::size_t foreground_count = 0;
  std::size_t visible_count = 0;

  std::size_t cell_count() const { return static_cast<std::size_t>(height) * width; }
  std::size_t background_count() const { return cell_count() - foreground_count; }
};

// Pinhole projection with exact visibility against the cuboid surface. The
// foreground is every cell whose centre lies inside a one-cell square around
// some visible projection; each foreground cell corresponds to its nearest
// visible vertex (lowest index on ties).
ProjectedMesh project(std::span<const Eigen::Vector3d> vertices, const Extents& extents,
                      const Pose& pose, const CameraIntrinsics& cam);
ProjectedMesh project(const NeuralMeshModel& mesh, const Pose& pose, const CameraIntrinsics& cam);

// Camera centre expressed in the object frame.
Eigen::Vector3d camera_center(const Eigen::Matrix3d& r, double distance);

// First intersection of origin + t * dir (t >= 0) with the axis-aligned cuboid.
std::optional<double> ray_cuboid_entry(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir,
                                       const Extents& extents);

struct PoseBands {
  double elevation_lo = -std::numbers::pi / 18.0;
  double elevation_hi = std::numbers::pi / 3.0;
  double theta_lo = -std::numbers::pi / 6.0;
  double theta_hi = std::numbers::pi / 6.0;
};

struct PoseGridShape {
  int azimuths = 12;
  int elevations = 4;
  int thetas = 3;
  int size() const { return azimuths * elevations * thetas; }
};

// Cartesian product, azimuth-major then elevation then theta. Bin centres
// sit at the centres of equal sub-intervals of each band.
std::vector<Pose> pose_grid(int n_azimuth, int n_elevation, int n_theta, double distance,
                            const PoseBands& bands = {});
std::vector<Pose> pose_grid(const PoseGridShape& shape, double distance, const PoseBands& bands = {});

// Index of the bin whose centre is nearest to `pose` in each angle.
int nearest_pose_bin(const Pose& pose, const PoseGridShape& shape, const PoseBands& bands = {});

bool is_rotation(const Eigen::Matrix3d& r, double tolerance = 1e-6);

// Geodesic angle ||log(R_pred^T R_gt)||_F / sqrt(2), in [0, pi].
double pose_error(const Eigen::Matrix3d& r_pred, const Eigen::Matrix3d& r_gt);

}  // namespace rcnet
