#include "rcnet/likelihood.hpp"

#include <algorithm>
#include <cmath>

#include "rcnet/kernels.hpp"

namespace rcnet {

namespace {

void check_lattice(const FeatureMap& features, const ProjectedMesh& proj) {
  if (proj.height != features.height || proj.width != features.width) {
    throw InvalidArgument("projection lattice differs from feature map lattice");
  }
  if (proj.foreground.size() != features.size() || proj.correspondence.size() != features.size()) {
    throw InvalidArgument("projection mask size differs from feature map");
  }
}

void check_texture(const FeatureMap& features, const FeatureRows& texture) {
  if (texture.dim != features.dim()) throw InvalidArgument("texture dimension differs from feature map");
}

void check_background(const FeatureMap& features, const BackgroundModel& background) {
  if (background.mean.size() != features.dim()) {
    throw InvalidArgument("background dimension differs from feature map");
  }
}

}  // namespace

double background_nll(const FeatureMap& features, const ProjectedMesh& proj,
                      const BackgroundModel& background) {
  check_lattice(features, proj);
  check_background(features, background);
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  double sum = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!proj.foreground[i]) sum += k.squared_distance(features.cells.data(i), background.mean.data(), dim);
  }
  return 0.5 * sum;
}

double nll(const FeatureMap& features, const ProjectedMesh& proj, const FeatureRows& texture,
           const BackgroundModel& background) {
  check_lattice(features, proj);
  check_texture(features, texture);
  check_background(features, background);
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  double sum = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    const double* ref;
    if (proj.foreground[i]) {
      const auto r = static_cast<std::size_t>(proj.correspondence[i]);
      if (r >= texture.rows) throw InvalidArgument("correspondence indexes past the texture");
      ref = texture.data(r);
    } else {
      ref = background.mean.data();
    }
    sum += k.squared_distance(features.cells.data(i), ref, dim);
  }
  return 0.5 * sum;
}

double match_score(const FeatureMap& features, const ProjectedMesh& proj, const FeatureRows& texture) {
  check_lattice(features, proj);
  check_texture(features, texture);
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < features.size(); ++i) {
    if (!proj.foreground[i]) continue;
    const double* f = features.cells.data(i);
    const double* c = texture.data(static_cast<std::size_t>(proj.correspondence[i]));
    const double nf = k.dot(f, f, dim), nc = k.dot(c, c, dim);
    double cosine = 0.0;
    if (nf > 0.0 && nc > 0.0) cosine = std::clamp(k.dot(f, c, dim) / std::sqrt(nf * nc), -1.0, 1.0);
    sum += 0.5 * (1.0 + cosine);
    ++count;
  }
  return count == 0 ? 0.0 : sum / static_cast<double>(count);
}

ReconstructionReport reconstruct(const FeatureMap& features, const ProjectedMesh& proj,
                                 const FeatureRows& texture, const BackgroundModel& background) {
  ReconstructionReport rep;
  rep.nll = nll(features, proj, texture, background);
  rep.foreground_count = proj.foreground_count;
  rep.background_count = proj.background_count();
  rep.match_score = match_score(features, proj, texture);
  return rep;
}

void bilinear_sample(const FeatureMap& features, double u, double v, BilinearSample& out,
                     bool with_derivatives) {
  const std::size_t dim = features.dim();
  out.value.resize(dim);
  const double uc = std::clamp(u, 0.0, static_cast<double>(features.width - 1));
  const double vc = std::clamp(v, 0.0, static_cast<double>(features.height - 1));
  const int x0 = features.width > 1 ? std::min(static_cast<int>(std::floor(uc)), features.width - 2) : 0;
  const int y0 = features.height > 1 ? std::min(static_cast<int>(std::floor(vc)), features.height - 2) : 0;
  const int x1 = features.width > 1 ? x0 + 1 : 0;
  const int y1 = features.height > 1 ? y0 + 1 : 0;
  const double a = uc - x0, b = vc - y0;
  const double* rows[4] = {features.at(y0, x0).data(), features.at(y0, x1).data(),
                           features.at(y1, x0).data(), features.at(y1, x1).data()};
  const auto& k = kernels::active();
  const double w[4] = {(1 - a) * (1 - b), a * (1 - b), (1 - a) * b, a * b};
  k.blend4(w, rows, out.value.data(), dim);
  if (!with_derivatives) return;
  out.d_u.assign(dim, 0.0);
  out.d_v.assign(dim, 0.0);
  const bool u_free = features.width > 1 && u >= 0.0 && u <= features.width - 1;
  const bool v_free = features.height > 1 && v >= 0.0 && v <= features.height - 1;
  if (u_free) {
    const double wu[4] = {-(1 - b), (1 - b), -b, b};
    k.blend4(wu, rows, out.d_u.data(), dim);
  }
  if (v_free) {
    const double wv[4] = {-(1 - a), -a, (1 - a), a};
    k.blend4(wv, rows, out.d_v.data(), dim);
  }
}

PoseGradient pose_gradient(const FeatureMap& features, const ProjectedMesh& frozen,
                           std::span<const Eigen::Vector3d> vertices, const FeatureRows& texture,
                           const Pose& pose, const CameraIntrinsics& cam,
                           const BackgroundModel& background) {
  check_lattice(features, frozen);
  check_texture(features, texture);
  if (frozen.visible.size() != vertices.size() || texture.rows != vertices.size()) {
    throw InvalidArgument("frozen projection does not match the mesh");
  }
  pose.validate();
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  const RotationJacobian jac = rotation_jacobian(pose);
  const Eigen::Vector3d t(0, 0, pose.distance);

  PoseGradient out;
  out.value = background_nll(features, frozen, background);
  BilinearSample s;
  std::vector<double> residual(dim);
  for (std::size_t r = 0; r < vertices.size(); ++r) {
    if (!frozen.visible[r]) continue;
    const Eigen::Vector3d& p = vertices[r];
    const Eigen::Vector3d xc = jac.r * p + t;
    if (xc.z() <= 0.0) continue;
    const double iz = 1.0 / xc.z();
    const double u = cam.focal * xc.x() * iz + cam.u0;
    const double v = cam.focal * xc.y() * iz + cam.v0;
    bilinear_sample(features, u, v, s, true);
    const double* c = texture.data(r);
    for (std::size_t d = 0; d < dim; ++d) residual[d] = s.value[d] - c[d];
    out.value += 0.5 * k.dot(residual.data(), residual.data(), dim);
    ++out.sampled_vertices;

    const double gu = k.dot(residual.data(), s.d_u.data(), dim);
    const double gv = k.dot(residual.data(), s.d_v.data(), dim);
    if (gu == 0.0 && gv == 0.0) continue;
    const Eigen::Matrix3d* d_rot[3] = {&jac.d_azimuth, &jac.d_elevation, &jac.d_theta};
    for (int q = 0; q < 3; ++q) {
      const Eigen::Vector3d dx = (*d_rot[q]) * p;
      const double du = cam.focal * (dx.x() * iz - xc.x() * dx.z() * iz * iz);
      const double dv = cam.focal * (dx.y() * iz - xc.y() * dx.z() * iz * iz);
      out.grad[q] += gu * du + gv * dv;
    }
  }
  return out;
}

double vertex_sampled_nll(const FeatureMap& features, const ProjectedMesh& frozen,
                          std::span<const Eigen::Vector3d> vertices, const FeatureRows& texture,
                          const Pose& pose, const CameraIntrinsics& cam,
                          const BackgroundModel& background) {
  check_lattice(features, frozen);
  check_texture(features, texture);
  if (frozen.visible.size() != vertices.size() || texture.rows != vertices.size()) {
    throw InvalidArgument("frozen projection does not match the mesh");
  }
  pose.validate();
  const auto& k = kernels::active();
  const std::size_t dim = features.dim();
  const Eigen::Matrix3d rot = rotation_from_pose(pose);
  const Eigen::Vector3d t(0, 0, pose.distance);
  double value = background_nll(features, frozen, background);
  BilinearSample s;
  for (std::size_t r = 0; r < vertices.size(); ++r) {
    if (!frozen.visible[r]) continue;
    const Eigen::Vector3d xc = rot * vertices[r] + t;
    if (xc.z() <= 0.0) continue;
    const double u = cam.focal * xc.x() / xc.z() + cam.u0;
    const double v = cam.focal * xc.y() / xc.z() + cam.v0;
    bilinear_sample(features, u, v, s, false);
    value += 0.5 * k.squared_distance(s.value.data(), texture.data(r), dim);
  }
  return value;
}

double vertex_sampled_nll(const FeatureMap& features, const NeuralMeshModel& mesh, const Pose& pose,
                          const CameraIntrinsics& cam, const BackgroundModel& background) {
  const ProjectedMesh proj = project(mesh, pose, cam);
  return vertex_sampled_nll(features, proj, mesh.vertices, mesh.texture, pose, cam, background);
}

PoseGradient pose_gradient(const FeatureMap& features, const NeuralMeshModel& mesh, const Pose& pose,
                           const CameraIntrinsics& cam, const BackgroundModel& background) {
  const ProjectedMesh proj = project(mesh, pose, cam);
  return pose_gradient(features, proj, mesh.vertices, mesh.texture, pose, cam, background);
}

FeatureMap render_features(const NeuralMeshModel& mesh, const Pose& pose, const CameraIntrinsics& cam,
                           const BackgroundModel& background) {
  const ProjectedMesh proj = project(mesh, pose, cam);
  FeatureMap out(cam.height, cam.width, mesh.feature_dim(), Provenance::rendered);
  for (std::size_t i = 0; i < out.size(); ++i) {
    auto dst = out.at(i);
    if (proj.foreground[i]) {
      auto src = mesh.texture.row(static_cast<std::size_t>(proj.correspondence[i]));
      std::copy(src.begin(), src.end(), dst.begin());
    } else {
      std::copy(background.mean.begin(), background.mean.end(), dst.begin());
    }
  }
  return out;
}

}  // namespace rcnet
