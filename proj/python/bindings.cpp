#include "refshape/metrics.hpp"
#include "refshape/point_sampling.hpp"
#include "refshape/preprocess.hpp"
#include "refshape/registration.hpp"
#include "refshape/synth.hpp"
#include "refshape/trainer.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

namespace py = pybind11;
using namespace refshape;

namespace {

using Points = py::array_t<double, py::array::c_style | py::array::forcecast>;
using Indices = py::array_t<int, py::array::c_style | py::array::forcecast>;

std::vector<Vec3> to_points(const Points& a) {
  if (a.ndim() != 2 || a.shape(1) != 3) throw std::invalid_argument("expected an (N, 3) array");
  std::vector<Vec3> out(static_cast<std::size_t>(a.shape(0)));
  const double* p = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = Vec3(p[3 * i], p[3 * i + 1], p[3 * i + 2]);
  return out;
}

py::array_t<double> from_points(const std::vector<Vec3>& v) {
  py::array_t<double> a({static_cast<py::ssize_t>(v.size()), py::ssize_t{3}});
  auto m = a.mutable_unchecked<2>();
  for (std::size_t i = 0; i < v.size(); ++i)
    for (int c = 0; c < 3; ++c) m(static_cast<py::ssize_t>(i), c) = v[i][c];
  return a;
}

py::array_t<int> from_ints(const std::vector<int>& v, py::ssize_t cols = 0) {
  if (cols == 0) return py::array_t<int>(static_cast<py::ssize_t>(v.size()), v.data());
  return py::array_t<int>({static_cast<py::ssize_t>(v.size()) / cols, cols}, v.data());
}

LabeledSurface make_surface(const Points& vertices, const Indices& faces, const Indices& region, std::vector<int> landmarks) {
  LabeledSurface s;
  s.vertices = to_points(vertices);
  if (faces.size() > 0) {
    if (faces.ndim() != 2 || faces.shape(1) != 3) throw std::invalid_argument("faces must be an (M, 3) array");
    for (py::ssize_t f = 0; f < faces.shape(0); ++f) s.faces.push_back({faces.at(f, 0), faces.at(f, 1), faces.at(f, 2)});
  }
  if (region.size() > 0) {
    for (py::ssize_t i = 0; i < region.size(); ++i) s.region.push_back(region.data()[i] ? Region::Jaw : Region::Midface);
  } else {
    s.region.assign(s.size(), Region::Midface);
  }
  s.landmarks = std::move(landmarks);
  validate(s);
  return s;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Reference shape estimation for jaw deformities";

  py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
  py::register_exception<ValidationError>(m, "ValidationError", PyExc_ValueError);
  py::register_exception<CheckpointError>(m, "CheckpointError", PyExc_IOError);
  py::register_exception<TrainingError>(m, "TrainingError", PyExc_RuntimeError);
  py::register_exception<NumericalError>(m, "NumericalError", PyExc_ArithmeticError);

  py::enum_<Region>(m, "Region").value("Midface", Region::Midface).value("Jaw", Region::Jaw);

  py::class_<LabeledSurface>(m, "Surface")
      .def(py::init(&make_surface), py::arg("vertices"), py::arg("faces") = Indices(),
           py::arg("region") = Indices(), py::arg("landmarks") = std::vector<int>{},
           "region holds 1 for jaw vertices and 0 for midface vertices")
      .def_property(
          "vertices", [](const LabeledSurface& s) { return from_points(s.vertices); },
          [](LabeledSurface& s, const Points& v) {
            auto pts = to_points(v);
            if (pts.size() != s.size()) throw std::invalid_argument("vertex count must not change");
            s.vertices = std::move(pts);
          })
      .def_property_readonly("faces",
                             [](const LabeledSurface& s) {
                               std::vector<int> flat;
                               for (const auto& f : s.faces) flat.insert(flat.end(), f.begin(), f.end());
                               return from_ints(flat, 3);
                             })
      .def_property_readonly("region",
                             [](const LabeledSurface& s) {
                               std::vector<int> r;
                               for (auto x : s.region) r.push_back(x == Region::Jaw ? 1 : 0);
                               return from_ints(r);
                             })
      .def_readonly("landmarks", &LabeledSurface::landmarks)
      .def("__len__", &LabeledSurface::size)
      .def("validate", [](const LabeledSurface& s) { validate(s); });

  m.def("load_surface", &load_surface, py::arg("path"));
  m.def("save_surface", &save_surface, py::arg("surface"), py::arg("path"));

  m.def(
      "furthest_point_sampling",
      [](const Points& p, int n_sub, int seed) { return from_ints(furthest_point_sampling(to_points(p), n_sub, seed).indices); },
      py::arg("points"), py::arg("n_sub"), py::arg("seed") = 0);
  m.def("invariant_seed", [](const Points& p) { return invariant_seed(to_points(p)); }, py::arg("points"));
  m.def(
      "ball_query",
      [](const Points& centers, const Points& points, double radius, int max_k) {
        const auto g = ball_query(to_points(centers), to_points(points), radius, max_k);
        return py::make_tuple(from_ints(g.neighbors, max_k), from_ints(g.counts));
      },
      py::arg("centers"), py::arg("points"), py::arg("radius"), py::arg("max_k"),
      "Returns (neighbors (C, max_k), counts (C,))");
  m.def(
      "knn", [](const Points& q, const Points& s, int k) { return from_ints(knn(to_points(q), to_points(s), k), k); },
      py::arg("queries"), py::arg("sources"), py::arg("k"));

  m.def(
      "procrustes_align",
      [](const Points& src, const Points& dst) {
        const auto t = procrustes_align(to_points(src), to_points(dst));
        return py::make_tuple(Eigen::Matrix3d(t.rotation), Vec3(t.translation), t.scale);
      },
      py::arg("source"), py::arg("target"), "Returns (rotation, translation, scale) with target ~ s R x + t");
  m.def(
      "cpd_nonrigid",
      [](const LabeledSurface& templ, const Points& target, double beta, double lambda, double w, int max_iterations,
         double tolerance) {
        const CpdConfig cfg{beta, lambda, w, max_iterations, tolerance};
        auto r = cpd_nonrigid(templ, to_points(target), cfg);
        return py::make_tuple(std::move(r.warped), r.iterations, r.converged);
      },
      py::arg("template"), py::arg("target"), py::arg("beta") = 2.0, py::arg("lambda_") = 3.0, py::arg("w") = 0.1,
      py::arg("max_iterations") = 150, py::arg("tolerance") = 1e-6, "Returns (warped, iterations, converged)");
  m.def(
      "qem_simplify", [](const LabeledSurface& s, int n) { return qem_simplify(s, n).surface; }, py::arg("surface"),
      py::arg("target_vertices"));

  py::class_<AnatomyParams>(m, "AnatomyParams")
      .def(py::init<>())
      .def_readwrite("seed", &AnatomyParams::seed)
      .def_readwrite("n_points", &AnatomyParams::n_points)
      .def_readwrite("landmarks", &AnatomyParams::landmarks)
      .def_readwrite("jaw_fraction", &AnatomyParams::jaw_fraction)
      .def_readwrite("normal_amplitude", &AnatomyParams::normal_amplitude)
      .def_readwrite("magnitude", &AnatomyParams::magnitude)
      .def_property(
          "family", [](const AnatomyParams& p) { return family_name(p.family); },
          [](AnatomyParams& p, const std::string& f) { p.family = parse_family(f); });

  m.def("make_template", &make_template, py::arg("params"));
  m.def("sample_normal", &sample_normal, py::arg("params"), py::arg("subject_seed"));
  m.def(
      "generate_dataset",
      [](const AnatomyParams& p, int n_normals, int n_patients, const std::filesystem::path& out) {
        generate_dataset(p, n_normals, n_patients, out);
        return out / "manifest.json";
      },
      py::arg("params"), py::arg("n_normals"), py::arg("n_patients"), py::arg("out_dir"),
      "Writes the dataset and returns the manifest path");
  m.def(
      "preprocess",
      [](const std::filesystem::path& manifest, const std::filesystem::path& out, int target_vertices, int jobs) {
        PreprocessOptions opt;
        opt.target_vertices = target_vertices;
        opt.jobs = jobs;
        const auto r = preprocess_dataset(load_manifest(manifest), out, opt);
        if (!r.failures.empty()) throw std::runtime_error("preprocess failed: " + r.failures.front());
        return out / "manifest.json";
      },
      py::arg("manifest"), py::arg("out_dir"), py::arg("target_vertices") = 0, py::arg("jobs") = 1);

  py::class_<NetworkConfig>(m, "NetworkConfig")
      .def(py::init<>())
      .def_static("desk", &NetworkConfig::desk, py::arg("n_points"), py::arg("landmarks") = 12)
      .def_readwrite("n_points", &NetworkConfig::n_points)
      .def_readwrite("max_k", &NetworkConfig::max_k)
      .def_readwrite("landmarks", &NetworkConfig::landmarks)
      .def("min_points", &NetworkConfig::min_points);

  py::class_<TrainConfig>(m, "TrainConfig")
      .def(py::init<>())
      .def_readwrite("epochs", &TrainConfig::epochs)
      .def_readwrite("learning_rate", &TrainConfig::learning_rate)
      .def_readwrite("batch_size", &TrainConfig::batch_size)
      .def_readwrite("network", &TrainConfig::network)
      .def_readwrite("seed", &TrainConfig::seed)
      .def_readwrite("pairs_per_epoch", &TrainConfig::pairs_per_epoch)
      .def_property(
          "alpha", [](const TrainConfig& c) { return c.weights.alpha; }, [](TrainConfig& c, double v) { c.weights.alpha = v; })
      .def_property(
          "beta", [](const TrainConfig& c) { return c.weights.beta; }, [](TrainConfig& c, double v) { c.weights.beta = v; })
      .def_property(
          "lambda_", [](const TrainConfig& c) { return c.weights.lambda; },
          [](TrainConfig& c, double v) { c.weights.lambda = v; });

  py::class_<Checkpoint>(m, "Checkpoint")
      .def_readonly("epoch", &Checkpoint::epoch)
      .def_property_readonly("config", [](const Checkpoint& c) { return c.config; })
      .def_property_readonly("corrector_losses",
                             [](const Checkpoint& c) {
                               std::vector<double> out;
                               for (int e = 1; e <= c.epoch; ++e) out.push_back(epoch_mean(c.history, e, NetKind::Corrector));
                               return out;
                             })
      .def("save", [](const Checkpoint& c, const std::filesystem::path& p) { save_checkpoint(c, p); }, py::arg("path"));

  m.def("load_checkpoint", &load_checkpoint, py::arg("path"));
  m.def(
      "train",
      [](const std::filesystem::path& manifest, const TrainConfig& cfg) {
        py::gil_scoped_release release;
        return train(load_manifest(manifest), cfg);
      },
      py::arg("manifest"), py::arg("config"));
  m.def(
      "infer",
      [](const Checkpoint& ck, const LabeledSurface& s) {
        auto r = infer(ck, s);
        return py::make_tuple(std::move(r.reference), from_points(r.correction.vectors));
      },
      py::arg("checkpoint"), py::arg("surface"), "Returns (reference surface, (N, 3) correction)");

  m.def(
      "vertex_distance", [](const LabeledSurface& e, const LabeledSurface& t, Region r) { return vertex_distance(e, t, r); },
      py::arg("estimated"), py::arg("truth"), py::arg("region"));
  m.def("default_coverage_tolerance", &default_coverage_tolerance, py::arg("truths"));
  m.def(
      "evaluate_json",
      [](const std::vector<LabeledSurface>& est, const std::vector<LabeledSurface>& truth, std::optional<double> tau,
         const std::vector<std::string>& names) {
        const double t = tau ? *tau : default_coverage_tolerance(truth);
        return report_json(evaluate_cohort(est, truth, t, names));
      },
      py::arg("estimated"), py::arg("truth"), py::arg("tau") = py::none(), py::arg("names") = std::vector<std::string>{});
}
