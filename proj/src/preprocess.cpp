#include "refshape/preprocess.hpp"

#include <algorithm>
#include <atomic>
#include <optional>
#include <thread>

namespace refshape {

namespace {

std::string corr_name(const std::string& rel) {
  std::filesystem::path p(rel);
  p.replace_extension(".corr.ply");
  return p.generic_string();
}

struct Job {
  std::string source;  // manifest-relative input path
  LabeledSurface aligned;
  std::optional<LabeledSurface> result;
  std::string error;
  bool capped = false;
};

}  // namespace

RigidTransform rigid_landmark_fit(const LabeledSurface& source, const LabeledSurface& target) {
  const auto src = landmark_positions(source);
  const auto dst = landmark_positions(target);
  RigidTransform t = procrustes_align(src, dst);
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    mu_s += src[i];
    mu_t += dst[i];
  }
  mu_s /= static_cast<double>(src.size());
  mu_t /= static_cast<double>(dst.size());
  t.scale = 1.0;
  t.translation = mu_t - t.rotation * mu_s;
  return t;
}

PreprocessReport preprocess_dataset(const Manifest& input, const std::filesystem::path& out_dir,
                                    const PreprocessOptions& options) {
  options.cpd.check();
  if (input.normals.empty() || input.patients.empty())
    throw std::invalid_argument("preprocess: manifest lists no normals or no patients");
  if (options.target_vertices < 0) throw std::invalid_argument("preprocess: target vertex count must be >= 0");

  PreprocessReport report;
  std::vector<LabeledSurface> normals;
  for (const auto& n : input.normals) normals.push_back(load_surface(input.resolve(n)));
  const LabeledSurface& frame = normals.front();

  std::vector<Job> jobs;
  for (std::size_t i = 0; i < normals.size(); ++i)
    jobs.push_back({input.normals[i], transform_surface(normals[i], rigid_landmark_fit(normals[i], frame)), {}, {}, false});
  for (const auto& rec : input.patients) {
    const auto patient = load_surface(input.resolve(rec.file));
    const auto t = rigid_landmark_fit(patient, frame);
    jobs.push_back({rec.file, transform_surface(patient, t), {}, {}, false});
    if (!rec.ground_truth.empty())
      jobs.push_back({rec.ground_truth, transform_surface(load_surface(input.resolve(rec.ground_truth)), t), {}, {}, false});
  }

  std::vector<LabeledSurface> aligned_normals;
  for (std::size_t i = 0; i < normals.size(); ++i) aligned_normals.push_back(jobs[i].aligned);
  report.template_index = select_template(aligned_normals);
  LabeledSurface templ = aligned_normals[report.template_index];
  if (options.target_vertices > 0 && options.target_vertices < static_cast<int>(templ.size()))
    templ = qem_simplify(templ, options.target_vertices).surface;

  std::atomic<std::size_t> next{0};
  const auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      try {
        auto r = cpd_nonrigid(templ, jobs[i].aligned.vertices, options.cpd);
        jobs[i].capped = !r.converged;
        jobs[i].result = std::move(r.warped);
      } catch (const std::exception& e) {
        jobs[i].error = e.what();
      }
    }
  };
  const int n_threads = std::clamp(options.jobs, 1, static_cast<int>(jobs.size()));
  std::vector<std::thread> pool;
  for (int t = 1; t < n_threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (const auto& j : jobs) {
    if (!j.result) report.failures.push_back(j.source + ": " + j.error);
    else if (j.capped) report.warnings.push_back(j.source + ": CPD stopped at the iteration cap");
  }
  if (!report.failures.empty()) return report;

  std::filesystem::create_directories(out_dir);
  for (const auto& j : jobs) {
    const auto path = out_dir / corr_name(j.source);
    std::filesystem::create_directories(path.parent_path());
    save_surface(*j.result, path);
  }
  const std::string templ_name = "reference/template.corr.ply";
  std::filesystem::create_directories(out_dir / "reference");
  save_surface(templ, out_dir / templ_name);

  Manifest& m = report.manifest;
  m.root = out_dir;
  m.seed = input.seed;
  m.templ = templ_name;
  for (const auto& n : input.normals) m.normals.push_back(corr_name(n));
  for (auto rec : input.patients) {
    rec.file = corr_name(rec.file);
    if (!rec.ground_truth.empty()) rec.ground_truth = corr_name(rec.ground_truth);
    m.patients.push_back(rec);
  }
  save_manifest(m, out_dir / "manifest.json");
  return report;
}

}  // namespace refshape
