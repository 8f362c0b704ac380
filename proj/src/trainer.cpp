#include "refshape/trainer.hpp"

#include "refshape/seeding.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <random>
#include <sstream>

namespace refshape {

using ag::Tensor;

void TrainConfig::check() const {
  if (epochs < 1) throw std::invalid_argument("TrainConfig: epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch size must be >= 1");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("TrainConfig: learning rate must be > 0");
  if (checkpoint_interval < 0) throw std::invalid_argument("TrainConfig: checkpoint interval must be >= 0");
  weights.check();
}

Checkpoint init_checkpoint(const TrainConfig& cfg, const NormalizationBox& box) {
  cfg.check();
  cfg.network.check();
  Checkpoint ck;
  ck.config = cfg;
  ck.box = box;
  ck.simulator = std::make_unique<SimulatorNet>(cfg.network, mix_seed(cfg.seed, 1));
  ck.corrector = std::make_unique<CorrectorNet>(cfg.network, mix_seed(cfg.seed, 2));
  return ck;
}

// ------------------------------------------------------------------ checkpoint I/O

namespace {

constexpr char kMagic[4] = {'R', 'S', 'H', 'F'};

template <typename T>
void put(std::ostream& out, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) throw CheckpointError(std::string("checkpoint truncated reading ") + what);
  return v;
}

void put_block(std::ostream& out, const std::string& name, const std::vector<double>& data) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint64_t>(out, data.size());
  out.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(double)));
}

std::vector<double> param_values(const ag::Parameter& p) { return {p.tensor.values().begin(), p.tensor.values().end()}; }

void put_store(std::ostream& out, const ag::ParameterStore& store) {
  for (const auto& p : store.params()) {
    put_block(out, "param/" + p.name, param_values(p));
    put_block(out, "adam.m/" + p.name, p.m);
    put_block(out, "adam.v/" + p.name, p.v);
    put_block(out, "adam.step/" + p.name, {static_cast<double>(p.step)});
  }
}

const std::vector<double>& need(const std::map<std::string, std::vector<double>>& blocks, const std::string& name,
                                std::size_t size) {
  const auto it = blocks.find(name);
  if (it == blocks.end()) throw CheckpointError("checkpoint lacks block '" + name + "'");
  if (size != static_cast<std::size_t>(-1) && it->second.size() != size)
    throw CheckpointError("checkpoint block '" + name + "' has " + std::to_string(it->second.size()) +
                          " values, expected " + std::to_string(size));
  return it->second;
}

void get_store(const std::map<std::string, std::vector<double>>& blocks, ag::ParameterStore& store) {
  for (auto& p : store.params()) {
    const auto& values = need(blocks, "param/" + p.name, p.tensor.numel());
    std::copy(values.begin(), values.end(), p.tensor.mutable_values().begin());
    const auto& m = need(blocks, "adam.m/" + p.name, static_cast<std::size_t>(-1));
    const auto& v = need(blocks, "adam.v/" + p.name, static_cast<std::size_t>(-1));
    if ((m.size() != 0 && m.size() != p.tensor.numel()) || v.size() != m.size())
      throw CheckpointError("checkpoint Adam state for '" + p.name + "' has the wrong size");
    p.m = m;
    p.v = v;
    p.step = static_cast<long>(need(blocks, "adam.step/" + p.name, 1)[0]);
  }
}

}  // namespace

void save_checkpoint(const Checkpoint& ck, const std::filesystem::path& path) {
  if (!ck.simulator || !ck.corrector) throw std::invalid_argument("save_checkpoint: networks missing");
  std::ostringstream out(std::ios::binary);
  out.write(kMagic, 4);
  put<std::uint32_t>(out, kCheckpointVersion);

  const auto& c = ck.config;
  put_block(out, "meta.network", c.network.to_vector());
  put_block(out, "meta.train",
            {static_cast<double>(c.epochs), c.learning_rate, static_cast<double>(c.batch_size), c.weights.alpha,
             c.weights.beta, c.weights.lambda, static_cast<double>(c.seed >> 32),
             static_cast<double>(c.seed & 0xffffffffULL), static_cast<double>(c.checkpoint_interval),
             static_cast<double>(c.pairs_per_epoch)});
  put_block(out, "meta.box",
            {ck.box.min.x(), ck.box.min.y(), ck.box.min.z(), ck.box.max.x(), ck.box.max.y(), ck.box.max.z()});
  put_block(out, "meta.epoch", {static_cast<double>(ck.epoch)});
  std::vector<double> hist;
  for (const auto& r : ck.history)
    hist.insert(hist.end(), {static_cast<double>(r.epoch), static_cast<double>(r.step),
                             r.net == NetKind::Simulator ? 0.0 : 1.0, r.loss, r.jaw, r.smooth, r.reg});
  put_block(out, "history", hist);
  put_store(out, ck.simulator->store());
  put_store(out, ck.corrector->store());

  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream file(tmp, std::ios::binary);
    if (!file) throw std::runtime_error("cannot write checkpoint " + tmp);
    const auto bytes = out.str();
    file.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!file) throw std::runtime_error("failed writing checkpoint " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw CheckpointError("not a checkpoint file: " + path.string());
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");

  std::map<std::string, std::vector<double>> blocks;
  while (in.peek() != std::char_traits<char>::eof()) {
    const auto len = get<std::uint32_t>(in, "block name length");
    if (len > 4096) throw CheckpointError("checkpoint block name too long (corrupt file)");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) throw CheckpointError("checkpoint truncated reading block name");
    const auto count = get<std::uint64_t>(in, "block size");
    if (count > (std::uint64_t{1} << 32)) throw CheckpointError("checkpoint block '" + name + "' is implausibly large");
    std::vector<double> data(count);
    if (!in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(count * sizeof(double))))
      throw CheckpointError("checkpoint truncated inside block '" + name + "'");
    blocks[name] = std::move(data);
  }

  TrainConfig cfg;
  try {
    cfg.network = NetworkConfig::from_vector(need(blocks, "meta.network", 29));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(e.what());
  }
  const auto& t = need(blocks, "meta.train", 10);
  cfg.epochs = static_cast<int>(t[0]);
  cfg.learning_rate = t[1];
  cfg.batch_size = static_cast<int>(t[2]);
  cfg.weights = {t[3], t[4], t[5]};
  cfg.seed = (static_cast<std::uint64_t>(t[6]) << 32) | static_cast<std::uint64_t>(t[7]);
  cfg.checkpoint_interval = static_cast<int>(t[8]);
  cfg.pairs_per_epoch = static_cast<std::size_t>(t[9]);
  const auto& b = need(blocks, "meta.box", 6);
  NormalizationBox box{{b[0], b[1], b[2]}, {b[3], b[4], b[5]}};

  Checkpoint ck;
  try {
    ck = init_checkpoint(cfg, box);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(std::string("checkpoint holds an invalid configuration: ") + e.what());
  }
  ck.epoch = static_cast<int>(need(blocks, "meta.epoch", 1)[0]);
  const auto& h = need(blocks, "history", static_cast<std::size_t>(-1));
  if (h.size() % 7 != 0) throw CheckpointError("checkpoint history block is malformed");
  for (std::size_t i = 0; i < h.size(); i += 7)
    ck.history.push_back({static_cast<int>(h[i]), static_cast<int>(h[i + 1]),
                          h[i + 2] == 0.0 ? NetKind::Simulator : NetKind::Corrector, h[i + 3], h[i + 4], h[i + 5],
                          h[i + 6]});
  get_store(blocks, ck.simulator->store());
  get_store(blocks, ck.corrector->store());
  return ck;
}

void write_loss_csv(const std::vector<LossRecord>& history, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "epoch,step,net,loss,L_jaw,L_smooth,L_reg\n";
  char buf[256];
  for (const auto& r : history) {
    if (r.net == NetKind::Simulator)
      std::snprintf(buf, sizeof buf, "%d,%d,simulator,%.12g,%.12g,%.12g,%.12g\n", r.epoch, r.step, r.loss, r.jaw,
                    r.smooth, r.reg);
    else
      std::snprintf(buf, sizeof buf, "%d,%d,corrector,%.12g,,,%.12g\n", r.epoch, r.step, r.loss, r.reg);
    out << buf;
  }
}

double epoch_mean(const std::vector<LossRecord>& history, int epoch, NetKind net) {
  double total = 0.0;
  int n = 0;
  for (const auto& r : history)
    if (r.epoch == epoch && r.net == net) {
      total += r.loss;
      ++n;
    }
  if (n == 0) throw std::invalid_argument("epoch_mean: no records for epoch " + std::to_string(epoch));
  return total / n;
}

// ------------------------------------------------------------------ data

TrainingData prepare_training_data(std::vector<LabeledSurface> normals, std::vector<LabeledSurface> patients,
                                   const NormalizationBox& box, const NetworkConfig& network) {
  if (normals.empty() || patients.empty()) throw std::invalid_argument("training needs at least one normal and one patient");
  const LabeledSurface& ref = normals.front();
  for (const auto* set : {&normals, &patients})
    for (const auto& s : *set)
      if (!same_correspondence(s, ref))
        throw std::invalid_argument("training surfaces are not in template correspondence");
  if (ref.landmarks.empty()) throw std::invalid_argument("training surfaces carry no landmarks");
  if (static_cast<int>(ref.size()) != network.n_points)
    throw std::invalid_argument("network configured for N=" + std::to_string(network.n_points) + " but data has N=" +
                                std::to_string(ref.size()));

  TrainingData d;
  d.box = box;
  for (auto& s : normals) d.normals.push_back(normalize(s, box));
  for (auto& s : patients) d.patients.push_back(normalize(s, box));
  for (const auto& s : d.normals) {
    d.normal_hierarchies.push_back(build_hierarchy(s.vertices, network, true));
    d.stencils.emplace_back(one_ring(s));
  }
  return d;
}

std::pair<std::vector<LabeledSurface>, std::vector<LabeledSurface>> load_training_surfaces(const Manifest& m) {
  std::vector<LabeledSurface> normals, patients;
  for (const auto& n : m.normals) normals.push_back(load_surface(m.resolve(n)));
  for (const auto& p : m.patients) patients.push_back(load_surface(m.resolve(p.file)));
  return {std::move(normals), std::move(patients)};
}

std::vector<std::size_t> epoch_schedule(std::uint64_t seed, int epoch, std::size_t n_pairs, std::size_t take) {
  std::vector<std::size_t> order(n_pairs);
  for (std::size_t i = 0; i < n_pairs; ++i) order[i] = i;
  // Fisher-Yates on raw 64-bit draws keeps the schedule independent of the
  // standard library's distribution implementations.
  std::mt19937_64 rng(mix_seed(seed, 0x7368756600000000ULL + static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n_pairs; i > 1; --i) std::swap(order[i - 1], order[rng() % i]);
  if (take > 0 && take < n_pairs) order.resize(take);
  return order;
}

// ------------------------------------------------------------------ training

namespace {

std::string diagnostic(const char* net, int epoch, int batch, double loss, double jaw, double smooth, double reg) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "non-finite %s loss at epoch %d, batch %d (loss=%g L_jaw=%g L_smooth=%g L_reg=%g)", net,
                epoch, batch, loss, jaw, smooth, reg);
  return buf;
}

}  // namespace

void train(Checkpoint& ck, const TrainingData& data, const EpochCallback& on_epoch) {
  ck.config.check();
  if (!ck.simulator || !ck.corrector) throw std::invalid_argument("train: checkpoint has no networks");
  auto& sim = *ck.simulator;
  auto& cor = *ck.corrector;
  const auto& w = ck.config.weights;
  ag::AdamConfig adam;
  adam.learning_rate = ck.config.learning_rate;

  const auto& ref = data.normals.front();
  const auto jaw = ref.indices_of(Region::Jaw);
  const auto mid = ref.indices_of(Region::Midface);
  const std::size_t n_patients = data.patients.size();
  const std::size_t n_pairs = data.normals.size() * n_patients;
  std::vector<Tensor> normal_pos, patient_pos;
  for (const auto& s : data.normals) normal_pos.push_back(positions_tensor(s.vertices));
  for (const auto& s : data.patients) patient_pos.push_back(positions_tensor(s.vertices));

  for (int epoch = ck.epoch + 1; epoch <= ck.config.epochs; ++epoch) {
    const auto schedule = epoch_schedule(ck.config.seed, epoch, n_pairs, ck.config.pairs_per_epoch);
    const auto batch = static_cast<std::size_t>(ck.config.batch_size);
    int step = 0;
    for (std::size_t start = 0; start < schedule.size(); start += batch, ++step) {
      const std::size_t end = std::min(schedule.size(), start + batch);
      const double inv_b = 1.0 / static_cast<double>(end - start);

      // Step A: simulator update.
      double jaw_sum = 0.0, smooth_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t a = schedule[k] / n_patients, b = schedule[k] % n_patients;
        const auto out = sim.forward(data.normals[a], data.normal_hierarchies[a], data.patients[b]);
        const Tensor lj = jaw_loss(patient_pos[b], out.positions, jaw, ref.landmarks);
        const Tensor ls = smooth_loss(out.displacement, data.stencils[a]);
        if (!mid.empty()) {
          ag::NoGradGuard guard;
          if (midface_loss(normal_pos[a], out.positions, mid).item() != 0.0)
            throw std::logic_error("simulator midface constraint violated");
        }
        jaw_sum += lj.item();
        smooth_sum += ls.item();
        const Tensor pair_loss = ag::add(lj, ag::scale(ls, w.alpha));
        if (!std::isfinite(pair_loss.item()))
          throw TrainingError(diagnostic("simulator", epoch, step, pair_loss.item(), lj.item(), ls.item(), 0.0));
        ag::backward(ag::scale(pair_loss, inv_b));
      }
      const Tensor sim_reg = l2_reg(sim.store());
      ag::backward(ag::scale(sim_reg, w.beta));
      LossRecord rs{epoch, step, NetKind::Simulator, 0.0, jaw_sum * inv_b, smooth_sum * inv_b, sim_reg.item()};
      rs.loss = rs.jaw + w.alpha * rs.smooth + w.beta * rs.reg;
      if (!std::isfinite(rs.loss)) throw TrainingError(diagnostic("simulator", epoch, step, rs.loss, rs.jaw, rs.smooth, rs.reg));
      ag::adam_step(sim.store(), adam);

      // Step B: corrector update on the refreshed simulator's detached output.
      double data_sum = 0.0;
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t a = schedule[k] / n_patients, b = schedule[k] % n_patients;
        std::vector<Vec3> simulated;
        {
          ag::NoGradGuard guard;
          simulated = tensor_positions(sim.forward(data.normals[a], data.normal_hierarchies[a], data.patients[b]).positions);
        }
        const Tensor corrected = ag::add(positions_tensor(simulated), cor.forward(simulated));
        const Tensor ld = corrector_data_loss(corrected, normal_pos[a]);
        if (!std::isfinite(ld.item())) throw TrainingError(diagnostic("corrector", epoch, step, ld.item(), 0, 0, 0));
        data_sum += ld.item();
        ag::backward(ag::scale(ld, inv_b));
      }
      const Tensor cor_reg = l2_reg(cor.store());
      ag::backward(ag::scale(cor_reg, w.lambda));
      LossRecord rc{epoch, step, NetKind::Corrector, data_sum * inv_b + w.lambda * cor_reg.item(), 0.0, 0.0,
                    cor_reg.item()};
      if (!std::isfinite(rc.loss)) throw TrainingError(diagnostic("corrector", epoch, step, rc.loss, 0, 0, rc.reg));
      ag::adam_step(cor.store(), adam);

      ck.history.push_back(rs);
      ck.history.push_back(rc);
    }
    ck.epoch = epoch;
    if (on_epoch) on_epoch(ck);
  }
}

Checkpoint train(const Manifest& manifest, TrainConfig cfg, const EpochCallback& on_epoch) {
  auto [normals, patients] = load_training_surfaces(manifest);
  if (normals.empty()) throw std::invalid_argument("manifest lists no normals");
  std::vector<LabeledSurface> all = normals;
  all.insert(all.end(), patients.begin(), patients.end());
  const auto box = union_box(all);
  cfg.network.n_points = static_cast<int>(normals.front().size());
  cfg.network.landmarks = static_cast<int>(normals.front().landmarks.size());
  Checkpoint ck = init_checkpoint(cfg, box);
  const auto data = prepare_training_data(std::move(normals), std::move(patients), box, cfg.network);
  train(ck, data, on_epoch);
  return ck;
}

// ------------------------------------------------------------------ inference

InferenceResult infer(const Checkpoint& ck, const LabeledSurface& patient) {
  if (!ck.corrector) throw std::invalid_argument("infer: checkpoint has no corrector");
  validate(patient);
  const auto normalized = normalize(patient, ck.box);
  const auto correction = corrector_forward(*ck.corrector, normalized).first;
  // The correction is a displacement, so only the box extent applies; adding
  // it to the untouched input keeps a zero correction exact.
  const Vec3 extent = ck.box.max - ck.box.min;
  InferenceResult r;
  r.reference = patient;
  r.correction.vectors.resize(patient.size());
  for (std::size_t i = 0; i < patient.size(); ++i) {
    const Vec3 d = correction.vectors[i].cwiseProduct(extent);
    r.reference.vertices[i] += d;
    r.correction.vectors[i] = d;
  }
  return r;
}

}  // namespace refshape
