#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <sstream>

#include "jogs/config.hpp"
#include "jogs/error.hpp"
#include "jogs/geometry.hpp"
#include "jogs/io.hpp"
#include "jogs/lk3d.hpp"
#include "jogs/metrics.hpp"
#include "jogs/pipeline.hpp"
#include "jogs/sfm.hpp"
#include "jogs/splat.hpp"
#include "jogs/synthetic.hpp"
#include "jogs/train.hpp"

namespace py = pybind11;
using namespace jogs;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

ImageBuffer to_image(const Array& a) {
  if (a.ndim() != 3 || a.shape(2) != 3) throw Error(ErrorKind::kInvalidArgument, "image must have shape (H, W, 3)");
  ImageBuffer img(static_cast<int>(a.shape(1)), static_cast<int>(a.shape(0)));
  std::copy(a.data(), a.data() + a.size(), img.data().begin());
  return img;
}

Array from_image(const ImageBuffer& img) {
  Array out({img.height(), img.width(), 3});
  std::copy(img.data().begin(), img.data().end(), out.mutable_data());
  return out;
}

std::vector<ImageBuffer> to_images(const std::vector<Array>& list) {
  std::vector<ImageBuffer> out;
  for (const auto& a : list) out.push_back(to_image(a));
  return out;
}

// Cloud <-> dict of (N, k) arrays.
py::dict from_cloud(const splat::GaussianCloud& c) {
  const auto n = static_cast<py::ssize_t>(c.size());
  Array pos({n, py::ssize_t{3}}), scale({n, py::ssize_t{3}}), rot({n, py::ssize_t{4}}), op({n}), col({n, py::ssize_t{3}});
  for (py::ssize_t i = 0; i < n; ++i) {
    const auto& g = c.gaussians[i];
    for (int d = 0; d < 3; ++d) {
      pos.mutable_at(i, d) = g.position[d];
      scale.mutable_at(i, d) = g.log_scale[d];
      col.mutable_at(i, d) = g.color[d];
    }
    for (int d = 0; d < 4; ++d) rot.mutable_at(i, d) = g.rotation[d];
    op.mutable_at(i) = g.opacity_logit;
  }
  py::dict out;
  out["positions"] = pos;
  out["log_scales"] = scale;
  out["rotations"] = rot;
  out["opacity_logits"] = op;
  out["colors"] = col;
  return out;
}

splat::GaussianCloud to_cloud(const py::dict& d) {
  const Array pos = d["positions"].cast<Array>();
  const auto n = pos.shape(0);
  auto get = [&](const char* key, py::ssize_t width, double fill) {
    Array a = d.contains(key) ? d[key].cast<Array>() : Array();
    if (d.contains(key)) {
      if (a.shape(0) != n || (width > 1 && (a.ndim() != 2 || a.shape(1) != width)))
        throw Error(ErrorKind::kInvalidArgument, std::string("bad shape for ") + key);
    } else {
      a = Array(width > 1 ? std::vector<py::ssize_t>{n, width} : std::vector<py::ssize_t>{n});
      std::fill(a.mutable_data(), a.mutable_data() + a.size(), fill);
    }
    return a;
  };
  if (pos.ndim() != 2 || pos.shape(1) != 3) throw Error(ErrorKind::kInvalidArgument, "positions must be (N, 3)");
  const Array scale = get("log_scales", 3, -2.0), op = get("opacity_logits", 1, 0.0), col = get("colors", 3, 0.5);
  Array rot = get("rotations", 4, 0.0);
  splat::GaussianCloud c;
  c.gaussians.resize(n);
  for (py::ssize_t i = 0; i < n; ++i) {
    auto& g = c.gaussians[i];
    for (int k = 0; k < 3; ++k) {
      g.position[k] = pos.at(i, k);
      g.log_scale[k] = scale.at(i, k);
      g.color[k] = col.at(i, k);
    }
    for (int k = 0; k < 4; ++k) g.rotation[k] = rot.at(i, k);
    if (!d.contains("rotations")) g.rotation = {1, 0, 0, 0};
    g.opacity_logit = op.at(i);
  }
  return c;
}

metrics::Trajectory to_trajectory(const std::vector<CameraPose>& poses) {
  metrics::Trajectory t;
  t.poses = poses;
  return t;
}

config::KeyValues to_key_values(const py::dict& d) {
  config::KeyValues kv;
  for (const auto& [k, v] : d) {
    const std::string key = py::str(k);
    if (py::isinstance<py::bool_>(v)) {
      kv[key] = v.cast<bool>() ? "true" : "false";
    } else {
      kv[key] = py::str(v);
    }
  }
  return kv;
}

py::dict metrics_dict(const pipeline::MetricsRow& m) {
  py::dict out;
  out["scene"] = m.scene;
  out["psnr"] = m.psnr;
  out["ssim"] = m.ssim;
  out["ate"] = m.ate;
  out["rpe_trans"] = m.rpe_trans;
  out["rpe_rot"] = m.rpe_rot;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Gaussian splatting with LK3D camera-pose refinement";

  // Messages start with the error kind, e.g. "config error: ...".
  py::register_exception<Error>(m, "JogsError", PyExc_RuntimeError);

  py::class_<EulerAngles>(m, "EulerAngles")
      .def(py::init<double, double, double>(), py::arg("alpha") = 0.0, py::arg("beta") = 0.0, py::arg("gamma") = 0.0)
      .def_readwrite("alpha", &EulerAngles::alpha)
      .def_readwrite("beta", &EulerAngles::beta)
      .def_readwrite("gamma", &EulerAngles::gamma);

  py::class_<CameraPose>(m, "CameraPose")
      .def(py::init([](double a, double b, double g, const Vec3& t) { return CameraPose{{a, b, g}, t}; }),
           py::arg("alpha") = 0.0, py::arg("beta") = 0.0, py::arg("gamma") = 0.0,
           py::arg("translation") = Vec3::Zero())
      .def_readwrite("rotation", &CameraPose::rotation)
      .def_readwrite("translation", &CameraPose::translation)
      .def("rotation_matrix", &CameraPose::rotation_matrix)
      .def("center", &CameraPose::center)
      .def("as_vector", &CameraPose::as_vector)
      .def_static("from_vector", &CameraPose::from_vector)
      .def("__eq__", &CameraPose::operator==)
      .def("__repr__", [](const CameraPose& p) {
        std::ostringstream s;
        s << "CameraPose(alpha=" << p.rotation.alpha << ", beta=" << p.rotation.beta << ", gamma=" << p.rotation.gamma
          << ", translation=[" << p.translation.transpose() << "])";
        return s.str();
      });

  py::class_<CameraIntrinsics>(m, "CameraIntrinsics")
      .def(py::init<double, double, double, double, int, int>(), py::arg("fx"), py::arg("fy"), py::arg("cx"),
           py::arg("cy"), py::arg("width"), py::arg("height"))
      .def_readwrite("fx", &CameraIntrinsics::fx)
      .def_readwrite("fy", &CameraIntrinsics::fy)
      .def_readwrite("cx", &CameraIntrinsics::cx)
      .def_readwrite("cy", &CameraIntrinsics::cy)
      .def_readwrite("width", &CameraIntrinsics::width)
      .def_readwrite("height", &CameraIntrinsics::height)
      .def("validate", &CameraIntrinsics::validate)
      .def("matrix", &CameraIntrinsics::matrix);

  // Geometry.
  m.def("euler_to_rotation", [](double a, double b, double g) { return geometry::euler_to_rotation({a, b, g}); },
        py::arg("alpha"), py::arg("beta"), py::arg("gamma"));
  m.def("rotation_jacobians", [](double a, double b, double g) {
    const auto j = geometry::rotation_jacobians({a, b, g});
    return std::vector<Mat3>(j.begin(), j.end());
  });
  m.def("rotation_to_euler", [](const Mat3& r) {
    const auto e = geometry::rotation_to_euler(r);
    return py::make_tuple(e.alpha, e.beta, e.gamma);
  });
  m.def("project", [](const Vec3& x, const CameraPose& p, const CameraIntrinsics& k) {
    const auto r = geometry::project(x, p, k);
    return py::make_tuple(r.pixel, r.depth);
  });
  m.def("projection_jacobian", &geometry::projection_jacobian);

  // Rendering.
  m.def("render", [](const py::dict& cloud, const CameraPose& pose, const CameraIntrinsics& k) {
    const auto out = splat::render(to_cloud(cloud), pose, k);
    Array alpha({k.height, k.width});
    std::copy(out.per_pixel_alpha.begin(), out.per_pixel_alpha.end(), alpha.mutable_data());
    return py::make_tuple(from_image(out.image), alpha);
  }, py::arg("cloud"), py::arg("pose"), py::arg("intrinsics"));

  // Metrics.
  m.def("compute_psnr", [](const Array& a, const Array& b) { return metrics::compute_psnr(to_image(a), to_image(b)); });
  m.def("compute_ssim", [](const Array& a, const Array& b) { return metrics::compute_ssim(to_image(a), to_image(b)); });
  m.def("compute_ate", [](const std::vector<CameraPose>& est, const std::vector<CameraPose>& ref) {
    return metrics::compute_ate(to_trajectory(est), to_trajectory(ref));
  });
  m.def("compute_rpe", [](const std::vector<CameraPose>& est, const std::vector<CameraPose>& ref, int delta) {
    const auto r = metrics::compute_rpe(to_trajectory(est), to_trajectory(ref), delta);
    return py::make_tuple(r.translation, r.rotation_deg);
  }, py::arg("estimated"), py::arg("reference"), py::arg("delta") = 1);
  m.def("photometric_loss", [](const Array& a, const Array& b, double lambda) {
    return train::photometric_loss(to_image(a), to_image(b), lambda);
  }, py::arg("rendered"), py::arg("target"), py::arg("lam") = 0.2);

  // Pose refinement.
  m.def("refine_pose", [](const py::dict& cloud, const CameraPose& pose, const CameraIntrinsics& k, const Array& image,
                          int max_iterations, double damping, double visibility_threshold) {
    lk3d::LkConfig cfg;
    cfg.max_iterations = max_iterations;
    cfg.damping = damping;
    cfg.visibility_threshold = visibility_threshold;
    const auto r = lk3d::refine_pose(to_cloud(cloud), pose, k, to_image(image), cfg);
    py::dict out;
    out["pose"] = r.pose;
    out["cost_trace"] = r.diagnostics.cost_trace;
    out["iterations"] = r.diagnostics.iterations;
    out["converged"] = r.diagnostics.converged;
    out["warnings"] = r.diagnostics.warnings;
    return out;
  }, py::arg("cloud"), py::arg("pose"), py::arg("intrinsics"), py::arg("image"), py::arg("max_iterations") = 20,
     py::arg("damping") = 0.0, py::arg("visibility_threshold") = 0.05);

  // Synthetic data and structure from motion.
  m.def("generate_synthetic_scene", [](const py::dict& options) {
    config::KeyValues kv = to_key_values(options);
    const auto s = synthetic::generate_synthetic_scene(synthetic::SyntheticSceneSpec::from_map(kv));
    py::dict out;
    out["cloud"] = from_cloud(s.cloud);
    out["poses"] = s.trajectory.poses;
    py::list images;
    for (const auto& img : s.images) images.append(from_image(img));
    out["images"] = images;
    out["intrinsics"] = s.intrinsics;
    out["extent"] = s.extent;
    return out;
  }, py::arg("options") = py::dict());

  m.def("run_sfm", [](const std::vector<Array>& images, const CameraIntrinsics& k) {
    const auto r = sfm::run_initialization(to_images(images), k);
    py::dict poses;
    for (const auto& [i, p] : r.poses) poses[py::int_(i)] = p;
    py::dict out;
    out["poses"] = poses;
    out["points"] = r.points;
    out["reference_image"] = r.reference_image;
    out["unregistered"] = r.unregistered;
    out["mean_reprojection_px"] = r.reprojection_error(k).first;
    out["cloud"] = from_cloud(sfm::seed_cloud(r));
    return out;
  }, py::arg("images"), py::arg("intrinsics"));

  // Whole pipeline.
  m.def("run_pipeline", [](py::object dataset, py::object synthetic_options, const py::dict& overrides,
                           const std::string& out_dir) {
    config::PipelineConfig cfg;
    cfg.apply(to_key_values(overrides));
    pipeline::Dataset ds;
    if (!dataset.is_none() && !synthetic_options.is_none()) {
      throw Error(ErrorKind::kConfig, "pass either dataset or synthetic, not both");
    }
    if (!dataset.is_none()) {
      ds = pipeline::load_dataset(dataset.cast<std::string>(), cfg.holdout_every);
    } else {
      const py::dict opts = synthetic_options.is_none() ? py::dict() : synthetic_options.cast<py::dict>();
      ds = pipeline::synthetic_dataset(synthetic::SyntheticSceneSpec::from_map(to_key_values(opts)), cfg.holdout_every);
    }
    pipeline::RunResult r;
    {
      py::gil_scoped_release release;
      r = pipeline::run_pipeline(ds, cfg, out_dir);
    }
    py::dict out;
    out["metrics"] = metrics_dict(r.evaluation.metrics);
    out["poses"] = r.evaluation.trajectory.poses;
    out["ids"] = r.evaluation.trajectory.ids;
    out["cloud"] = from_cloud(r.state.cloud);
    out["loss_history"] = r.state.loss_history;
    out["warnings"] = r.warnings;
    return out;
  }, py::arg("dataset") = py::none(), py::arg("synthetic") = py::none(), py::arg("config") = py::dict(),
     py::arg("out_dir") = "");

  m.def("export_cloud_ply", [](const py::dict& cloud, const std::filesystem::path& path) {
    io::export_cloud_ply(to_cloud(cloud), path);
  });
  m.def("import_cloud_ply", [](const std::filesystem::path& path) { return from_cloud(io::import_cloud_ply(path)); });
}
