// refshape command-line driver: synth, preprocess, train, infer, evaluate.
//
// Exit codes: 0 success (and --help), 1 runtime failure, 2 bad flags or
// configuration.

#include "refshape/metrics.hpp"
#include "refshape/preprocess.hpp"
#include "refshape/registration.hpp"
#include "refshape/synth.hpp"
#include "refshape/trainer.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

using namespace refshape;
namespace fs = std::filesystem;

namespace {

/// Flag combinations that only turn out invalid after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Globals {
  std::uint64_t seed = 0;
  int jobs = 1;
};

// ------------------------------------------------------------------ synth

struct SynthArgs {
  fs::path out;
  int normals = 40;
  int patients = 40;
  int points = 1024;
  int landmarks = 12;
  double jaw_fraction = 0.4;
  double amplitude = 0.012;
  std::string family = "protrusion";
  double magnitude = 0.08;
};

int cmd_synth(const Globals& g, const SynthArgs& a) {
  AnatomyParams p;
  p.seed = g.seed;
  p.n_points = a.points;
  p.landmarks = a.landmarks;
  p.jaw_fraction = a.jaw_fraction;
  p.normal_amplitude = a.amplitude;
  p.magnitude = a.magnitude;
  try {
    p.family = parse_family(a.family);
    p.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  generate_dataset(p, a.normals, a.patients, a.out);
  std::cout << (a.out / "manifest.json").string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ preprocess

struct PreprocessArgs {
  fs::path manifest;
  fs::path out;
  int vertices = 0;
  double cpd_beta = 2.0;
  double cpd_lambda = 3.0;
  double cpd_w = 0.1;
  int cpd_iterations = 150;
  double cpd_tolerance = 1e-6;
};

int cmd_preprocess(const Globals& g, const PreprocessArgs& a) {
  const auto m = load_manifest(a.manifest);
  if (m.normals.empty() || m.patients.empty()) throw UsageError("manifest lists no normals or no patients");
  PreprocessOptions opt;
  opt.cpd = {a.cpd_beta, a.cpd_lambda, a.cpd_w, a.cpd_iterations, a.cpd_tolerance};
  opt.target_vertices = a.vertices;
  opt.jobs = g.jobs;
  try {
    opt.cpd.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  const fs::path out = a.out.empty() ? m.root : a.out;
  const auto report = preprocess_dataset(m, out, opt);
  for (const auto& w : report.warnings) std::cerr << "warning: " << w << "\n";
  if (!report.failures.empty()) {
    for (const auto& f : report.failures) std::cerr << "error: " << f << "\n";
    return 1;
  }
  std::cout << "template: " << m.normals[report.template_index] << "\n" << (out / "manifest.json").string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
  fs::path manifest;
  fs::path out;
  fs::path loss_csv;
  fs::path resume;
  int epochs = 400;
  double lr = 1e-4;
  int batch = 4;
  double alpha = 0.3;
  double beta = 0.1;
  double lambda = 0.1;
  std::size_t pairs_per_epoch = 0;
  int checkpoint_interval = 0;
  std::string network = "desk";
};

int cmd_train(const Globals& g, const TrainArgs& a) {
  const auto manifest = load_manifest(a.manifest);
  if (manifest.normals.empty() || manifest.patients.empty()) throw UsageError("manifest lists no normals or no patients");

  TrainConfig cfg;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch;
  cfg.weights = {a.alpha, a.beta, a.lambda};
  cfg.seed = g.seed;
  cfg.pairs_per_epoch = a.pairs_per_epoch;
  cfg.checkpoint_interval = a.checkpoint_interval;
  try {
    cfg.check();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }

  auto [normals, patients] = load_training_surfaces(manifest);
  Checkpoint ck;
  if (!a.resume.empty()) {
    ck = load_checkpoint(a.resume);
    if (a.epochs <= ck.epoch)
      throw UsageError("--epochs " + std::to_string(a.epochs) + " does not extend the checkpoint (already at epoch " +
                       std::to_string(ck.epoch) + ")");
    ck.config.epochs = a.epochs;
  } else {
    const int n = static_cast<int>(normals.front().size());
    const int k = static_cast<int>(normals.front().landmarks.size());
    if (a.network == "desk") {
      cfg.network = NetworkConfig::desk(n, k);
    } else {
      cfg.network.n_points = n;
      cfg.network.landmarks = k;
    }
    try {
      cfg.network.check();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    std::vector<LabeledSurface> all = normals;
    all.insert(all.end(), patients.begin(), patients.end());
    ck = init_checkpoint(cfg, union_box(all));
  }
  const auto data = prepare_training_data(std::move(normals), std::move(patients), ck.box, ck.config.network);

  const fs::path loss_csv = a.loss_csv.empty() ? fs::path(a.out.string() + ".loss.csv") : a.loss_csv;
  const int interval = ck.config.checkpoint_interval;
  try {
    train(ck, data, [&](const Checkpoint& c) {
      std::fprintf(stderr, "epoch %d  simulator %.6g  corrector %.6g\n", c.epoch,
                   epoch_mean(c.history, c.epoch, NetKind::Simulator), epoch_mean(c.history, c.epoch, NetKind::Corrector));
      if (interval > 0 && c.epoch % interval == 0 && c.epoch < c.config.epochs) {
        char suffix[32];
        std::snprintf(suffix, sizeof suffix, ".e%04d", c.epoch);
        save_checkpoint(c, a.out.string() + suffix);
      }
    });
  } catch (const TrainingError&) {
    write_loss_csv(ck.history, loss_csv);
    throw;
  }
  save_checkpoint(ck, a.out);
  write_loss_csv(ck.history, loss_csv);
  std::printf("final epoch %d: simulator %.6g, corrector %.6g\n", ck.epoch,
              epoch_mean(ck.history, ck.epoch, NetKind::Simulator), epoch_mean(ck.history, ck.epoch, NetKind::Corrector));
  std::cout << a.out.string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ infer

struct InferArgs {
  fs::path checkpoint;
  fs::path input;
  fs::path output;
  fs::path field;
  fs::path manifest;
  fs::path out_dir;
  int first = 0;
};

void write_field_csv(const DisplacementField& f, const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "vertex,dx,dy,dz\n";
  char buf[128];
  for (std::size_t i = 0; i < f.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%.17g\n", i, f.vectors[i].x(), f.vectors[i].y(), f.vectors[i].z());
    out << buf;
  }
}

int cmd_infer(const InferArgs& a) {
  const bool single = !a.input.empty();
  const bool batch = !a.manifest.empty();
  if (single == batch) throw UsageError("give either --input/--output or --manifest/--out-dir");
  if (single && a.output.empty()) throw UsageError("--input needs --output");
  if (batch && a.out_dir.empty()) throw UsageError("--manifest needs --out-dir");

  const auto ck = load_checkpoint(a.checkpoint);
  if (single) {
    const auto r = infer(ck, load_surface(a.input));
    save_surface(r.reference, a.output);
    write_field_csv(r.correction, a.field.empty() ? fs::path(a.output).replace_extension(".correction.csv") : a.field);
    std::cout << a.output.string() << "\n";
    return 0;
  }

  // Batch mode: every patient of a manifest (optionally the first N skipped)
  // plus an evaluation manifest pairing estimates with ground truths.
  const auto m = load_manifest(a.manifest);
  fs::create_directories(a.out_dir);
  nlohmann::ordered_json eval;
  eval["cases"] = nlohmann::ordered_json::array();
  for (std::size_t i = static_cast<std::size_t>(a.first); i < m.patients.size(); ++i) {
    const auto& rec = m.patients[i];
    const auto stem = fs::path(rec.file).stem().string();
    const auto r = infer(ck, load_surface(m.resolve(rec.file)));
    const auto est = a.out_dir / (stem + ".reference.ply");
    save_surface(r.reference, est);
    write_field_csv(r.correction, a.out_dir / (stem + ".correction.csv"));
    if (!rec.ground_truth.empty())
      eval["cases"].push_back({{"name", stem},
                               {"estimated", fs::absolute(est).string()},
                               {"truth", fs::absolute(m.resolve(rec.ground_truth)).string()},
                               {"input", fs::absolute(m.resolve(rec.file)).string()},
                               {"remesh", false}});
  }
  std::ofstream(a.out_dir / "eval.json") << eval.dump(2) << "\n";
  std::cout << (a.out_dir / "eval.json").string() << "\n";
  return 0;
}

// ------------------------------------------------------------------ evaluate

struct EvaluateArgs {
  fs::path pairs;
  fs::path estimated;
  fs::path truth;
  bool remesh = false;
  std::optional<double> tau;
  fs::path json;
  fs::path csv;
  fs::path dump_dir;
  bool baseline = false;
};

int cmd_evaluate(const EvaluateArgs& a) {
  struct Case {
    std::string name;
    fs::path estimated, truth;
    bool remesh = false;
  };
  std::vector<Case> cases;
  std::optional<double> tau = a.tau;
  if (!a.pairs.empty()) {
    std::ifstream in(a.pairs);
    if (!in) throw UsageError("cannot read " + a.pairs.string());
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(a.pairs.string() + ": " + e.what());
    }
    const fs::path root = a.pairs.parent_path();
    if (!tau && j.contains("tau")) tau = j["tau"].get<double>();
    for (const auto& c : j.value("cases", nlohmann::json::array())) {
      const std::string est_key = a.baseline ? "input" : "estimated";
      if (!c.contains(est_key) || !c.contains("truth")) throw UsageError("evaluation case lacks '" + est_key + "' or 'truth'");
      cases.push_back({c.value("name", "case_" + std::to_string(cases.size())), root / c[est_key].get<std::string>(),
                       root / c["truth"].get<std::string>(), c.value("remesh", false)});
    }
  } else if (!a.estimated.empty() && !a.truth.empty()) {
    cases.push_back({a.estimated.stem().string(), a.estimated, a.truth, a.remesh});
  } else {
    throw UsageError("give --pairs or both --estimated and --truth");
  }
  if (cases.empty()) throw UsageError("no evaluation cases");

  std::vector<LabeledSurface> est, truth;
  std::vector<std::string> names;
  for (const auto& c : cases) {
    truth.push_back(load_surface(c.truth));
    auto e = load_surface(c.estimated);
    est.push_back(c.remesh || e.size() != truth.back().size() ? correspondence_remesh(truth.back(), e) : std::move(e));
    names.push_back(c.name);
  }
  if (tau && !(*tau > 0.0)) throw UsageError("--tau must be > 0");
  const double t = tau ? *tau : default_coverage_tolerance(truth);
  const auto report = evaluate_cohort(est, truth, t, names);

  if (!a.json.empty()) write_report_json(report, a.json);
  if (!a.csv.empty()) write_report_csv(report, a.csv);
  if (!a.dump_dir.empty()) {
    fs::create_directories(a.dump_dir);
    for (std::size_t i = 0; i < est.size(); ++i)
      write_vertex_distances_csv(est[i], truth[i], a.dump_dir / (names[i] + ".vd.csv"));
  }
  std::printf("tau %.6g, %zu case(s)\n", report.tau, report.cases.size());
  std::printf("%-8s %-22s %-22s %-22s %-22s\n", "region", "VD", "ED", "SC", "LD");
  for (const auto& [label, s] : {std::pair{"jaw", &report.jaw}, std::pair{"midface", &report.midface}}) {
    char ld[64] = "n/a";
    if (s->ld.count) std::snprintf(ld, sizeof ld, "%.5g +- %.5g", s->ld.mean, s->ld.std);
    std::printf("%-8s %9.5g +- %-9.5g %9.5g +- %-9.5g %9.5g +- %-9.5g %s\n", label, s->vd.mean, s->vd.std, s->ed.mean,
                s->ed.std, s->sc.mean, s->sc.std, ld);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"refshape: reference shape estimation for deformed labeled surfaces"};
  app.require_subcommand(1);
  app.set_config("--config", "", "TOML/INI file with option defaults (sections per subcommand)");
  Globals g;
  app.add_option("--seed", g.seed, "Run seed")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads for preprocess")->check(CLI::PositiveNumber)->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic dataset");
  synth->add_option("--out", sa.out, "Output directory")->required();
  synth->add_option("--normals", sa.normals, "Normal subjects")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--patients", sa.patients, "Deformed patients")->check(CLI::PositiveNumber)->capture_default_str();
  synth->add_option("--points", sa.points, "Vertex budget")->check(CLI::Range(64, 1 << 20))->capture_default_str();
  synth->add_option("--landmarks", sa.landmarks, "Landmark count K")->check(CLI::Range(3, 4096))->capture_default_str();
  synth->add_option("--jaw-fraction", sa.jaw_fraction, "Fraction of vertices labeled jaw")->capture_default_str();
  synth->add_option("--amplitude", sa.amplitude, "Normal variation RMS (fraction of diameter)")->capture_default_str();
  synth->add_option("--family", sa.family, "protrusion | retrusion | asymmetry")->capture_default_str();
  synth->add_option("--magnitude", sa.magnitude, "Deformity magnitude (fraction of diameter)")->capture_default_str();

  PreprocessArgs pa;
  auto* prep = app.add_subcommand("preprocess", "Align, select a template and warp it onto every surface");
  prep->add_option("--manifest", pa.manifest, "Input manifest.json")->required()->check(CLI::ExistingFile);
  prep->add_option("--out", pa.out, "Output directory (default: next to the manifest)");
  prep->add_option("--vertices", pa.vertices, "Simplify the template to this many vertices (0 keeps it)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  prep->add_option("--cpd-beta", pa.cpd_beta, "CPD kernel width")->capture_default_str();
  prep->add_option("--cpd-lambda", pa.cpd_lambda, "CPD coherence weight")->capture_default_str();
  prep->add_option("--cpd-w", pa.cpd_w, "CPD outlier weight")->capture_default_str();
  prep->add_option("--cpd-iterations", pa.cpd_iterations, "CPD iteration cap")->capture_default_str();
  prep->add_option("--cpd-tolerance", pa.cpd_tolerance, "CPD convergence tolerance")->capture_default_str();

  TrainArgs ta;
  auto* trn = app.add_subcommand("train", "Train simulator and corrector");
  trn->add_option("--manifest", ta.manifest, "Training manifest.json")->required()->check(CLI::ExistingFile);
  trn->add_option("--out", ta.out, "Checkpoint path")->required();
  trn->add_option("--loss-csv", ta.loss_csv, "Loss history CSV (default: <out>.loss.csv)");
  trn->add_option("--resume", ta.resume, "Continue from this checkpoint")->check(CLI::ExistingFile);
  trn->add_option("--epochs", ta.epochs, "Epochs")->check(CLI::PositiveNumber)->capture_default_str();
  trn->add_option("--lr", ta.lr, "Adam learning rate")->check(CLI::PositiveNumber)->capture_default_str();
  trn->add_option("--batch", ta.batch, "Pairs per batch")->check(CLI::PositiveNumber)->capture_default_str();
  trn->add_option("--alpha", ta.alpha, "Smoothness weight")->capture_default_str();
  trn->add_option("--beta", ta.beta, "Simulator L2 weight")->capture_default_str();
  trn->add_option("--lambda", ta.lambda, "Corrector L2 weight")->capture_default_str();
  trn->add_option("--pairs-per-epoch", ta.pairs_per_epoch, "Pairs drawn per epoch (0: whole grid)")->capture_default_str();
  trn->add_option("--checkpoint-interval", ta.checkpoint_interval, "Also save every N epochs (0: final only)")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();
  trn->add_option("--network", ta.network, "Architecture preset")
      ->check(CLI::IsMember({"desk", "full"}))
      ->capture_default_str();

  InferArgs ia;
  auto* inf = app.add_subcommand("infer", "Estimate reference shapes with a trained corrector");
  inf->add_option("--checkpoint", ia.checkpoint, "Checkpoint")->required()->check(CLI::ExistingFile);
  inf->add_option("--input", ia.input, "Patient surface (.ply)")->check(CLI::ExistingFile);
  inf->add_option("--output", ia.output, "Estimated reference surface (.ply)");
  inf->add_option("--field", ia.field, "Correction field CSV (default: <output>.correction.csv)");
  inf->add_option("--manifest", ia.manifest, "Run on every patient of this manifest")->check(CLI::ExistingFile);
  inf->add_option("--out-dir", ia.out_dir, "Output directory for --manifest");
  inf->add_option("--first", ia.first, "Skip this many leading patients in --manifest mode")
      ->check(CLI::NonNegativeNumber)
      ->capture_default_str();

  EvaluateArgs ea;
  double tau = 0.0;
  auto* ev = app.add_subcommand("evaluate", "VD/ED/SC/LD report");
  auto* pairs_opt = ev->add_option("--pairs", ea.pairs, "Evaluation manifest JSON")->check(CLI::ExistingFile);
  ev->add_option("--estimated", ea.estimated, "Estimated surface")->check(CLI::ExistingFile)->excludes(pairs_opt);
  ev->add_option("--truth", ea.truth, "Ground-truth surface")->check(CLI::ExistingFile)->excludes(pairs_opt);
  ev->add_flag("--remesh", ea.remesh, "Remesh the estimate onto the truth's topology");
  auto* tau_opt = ev->add_option("--tau", tau, "Surface-coverage tolerance (default: 0.02 x mean truth diameter)");
  ev->add_option("--json", ea.json, "Write the report as JSON");
  ev->add_option("--csv", ea.csv, "Write the per-case table as CSV");
  ev->add_option("--dump-dir", ea.dump_dir, "Write per-vertex distance CSVs here");
  ev->add_flag("--baseline", ea.baseline, "Score the uncorrected inputs listed in --pairs instead");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::CallForAllHelp& e) {
    app.exit(e);
    return 0;
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (tau_opt->count()) ea.tau = tau;

  try {
    if (*synth) return cmd_synth(g, sa);
    if (*prep) return cmd_preprocess(g, pa);
    if (*trn) return cmd_train(g, ta);
    if (*inf) return cmd_infer(ia);
    if (*ev) return cmd_evaluate(ea);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
