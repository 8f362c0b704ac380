#include "refshape/registration.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <queue>
#include <set>

namespace refshape {

namespace {

using MatX3 = Eigen::Matrix<double, Eigen::Dynamic, 3, Eigen::RowMajor>;

MatX3 to_matrix(std::span<const Vec3> pts) {
  MatX3 m(static_cast<Eigen::Index>(pts.size()), 3);
  for (std::size_t i = 0; i < pts.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = pts[i].transpose();
  return m;
}

struct Normalization {
  Eigen::RowVector3d mean;
  double scale = 1.0;
};

Normalization normalize_in_place(MatX3& m) {
  Normalization n;
  n.mean = m.colwise().mean();
  m.rowwise() -= n.mean;
  n.scale = std::sqrt(m.squaredNorm() / static_cast<double>(m.rows()));
  if (!(n.scale > 0.0)) throw NumericalError("cpd: point set has zero spread");
  m /= n.scale;
  return n;
}

}  // namespace

// ------------------------------------------------------------------ rigid

RigidTransform procrustes_align(std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw std::invalid_argument("procrustes_align: landmark counts differ");
  if (source.size() < 3) throw std::invalid_argument("procrustes_align: need at least 3 landmarks");
  const double k = static_cast<double>(source.size());
  Vec3 mu_s = Vec3::Zero(), mu_t = Vec3::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    mu_s += source[i];
    mu_t += target[i];
  }
  mu_s /= k;
  mu_t /= k;
  Eigen::Matrix3d cov = Eigen::Matrix3d::Zero();
  double var_s = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    cov += (target[i] - mu_t) * (source[i] - mu_s).transpose();
    var_s += (source[i] - mu_s).squaredNorm();
  }
  cov /= k;
  var_s /= k;

  Eigen::JacobiSVD<Eigen::Matrix3d> svd(cov, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vec3 sv = svd.singularValues();
  if (!(var_s > 0.0) || sv[0] <= 0.0 || sv[1] <= 1e-12 * sv[0])
    throw NumericalError("procrustes_align: landmarks are coincident or collinear");
  Eigen::Matrix3d sign = Eigen::Matrix3d::Identity();
  if (svd.matrixU().determinant() * svd.matrixV().determinant() < 0.0) sign(2, 2) = -1.0;

  RigidTransform t;
  t.rotation = svd.matrixU() * sign * svd.matrixV().transpose();
  t.scale = (sv.asDiagonal() * sign).trace() / var_s;
  t.translation = mu_t - t.scale * t.rotation * mu_s;
  return t;
}

double alignment_residual(const RigidTransform& t, std::span<const Vec3> source, std::span<const Vec3> target) {
  if (source.size() != target.size()) throw std::invalid_argument("alignment_residual: sizes differ");
  double r = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) r += (t.apply(source[i]) - target[i]).squaredNorm();
  return r;
}

LabeledSurface transform_surface(const LabeledSurface& s, const RigidTransform& t) {
  LabeledSurface out = s;
  for (auto& v : out.vertices) v = t.apply(v);
  return out;
}

std::vector<Vec3> landmark_positions(const LabeledSurface& s) {
  std::vector<Vec3> out;
  out.reserve(s.landmarks.size());
  for (std::size_t j = 0; j < s.landmarks.size(); ++j) out.push_back(s.landmark_position(j));
  return out;
}

std::size_t select_template(const std::vector<std::vector<Vec3>>& landmark_sets) {
  if (landmark_sets.empty()) throw std::invalid_argument("select_template: no surfaces");
  const std::size_t k = landmark_sets.front().size();
  for (const auto& set : landmark_sets)
    if (set.size() != k) throw std::invalid_argument("select_template: landmark counts differ");
  std::vector<Vec3> mean(k, Vec3::Zero());
  for (const auto& set : landmark_sets)
    for (std::size_t j = 0; j < k; ++j) mean[j] += set[j];
  for (auto& m : mean) m /= static_cast<double>(landmark_sets.size());
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < landmark_sets.size(); ++i) {
    double d = 0.0;
    for (std::size_t j = 0; j < k; ++j) d += (landmark_sets[i][j] - mean[j]).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

std::size_t select_template(const std::vector<LabeledSurface>& surfaces) {
  std::vector<std::vector<Vec3>> sets;
  sets.reserve(surfaces.size());
  for (const auto& s : surfaces) sets.push_back(landmark_positions(s));
  return select_template(sets);
}

// ------------------------------------------------------------------ CPD

void CpdConfig::check() const {
  if (!(beta > 0.0) || !(lambda > 0.0)) throw std::invalid_argument("CpdConfig: beta and lambda must be > 0");
  if (!(w >= 0.0 && w < 1.0)) throw std::invalid_argument("CpdConfig: w must be in [0, 1)");
  if (max_iterations < 1) throw std::invalid_argument("CpdConfig: max_iterations must be >= 1");
  if (!(tolerance > 0.0)) throw std::invalid_argument("CpdConfig: tolerance must be > 0");
}

CpdResult cpd_nonrigid(const LabeledSurface& templ, std::span<const Vec3> target, const CpdConfig& cfg) {
  cfg.check();
  if (templ.vertices.empty() || target.empty()) throw std::invalid_argument("cpd_nonrigid: empty point set");
  MatX3 y = to_matrix(templ.vertices);
  MatX3 x = to_matrix(target);
  normalize_in_place(y);
  const Normalization nx = normalize_in_place(x);
  const Eigen::Index m = y.rows(), n = x.rows();
  constexpr double dim = 3.0;

  Eigen::MatrixXd g(m, m);
  for (Eigen::Index i = 0; i < m; ++i)
    for (Eigen::Index j = i; j < m; ++j) {
      const double v = std::exp(-(y.row(i) - y.row(j)).squaredNorm() / (2.0 * cfg.beta * cfg.beta));
      g(i, j) = v;
      g(j, i) = v;
    }

  double sigma2 = (static_cast<double>(m) * x.squaredNorm() + static_cast<double>(n) * y.squaredNorm() -
                   2.0 * x.colwise().sum().dot(y.colwise().sum())) /
                  (dim * static_cast<double>(m * n));
  MatX3 w = MatX3::Zero(m, 3);
  MatX3 t = y;
  Eigen::MatrixXd p(m, n);
  double prev_l = std::numeric_limits<double>::infinity();

  CpdResult result;
  for (int iter = 1; iter <= cfg.max_iterations; ++iter) {
    result.iterations = iter;
    // E-step.
    const double c = std::pow(2.0 * M_PI * sigma2, dim / 2.0) * cfg.w / (1.0 - cfg.w) * static_cast<double>(m) /
                     static_cast<double>(n);
    double log_sum = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) {
      double den = c;
      for (Eigen::Index i = 0; i < m; ++i) {
        const double e = std::exp(-(x.row(j) - t.row(i)).squaredNorm() / (2.0 * sigma2));
        p(i, j) = e;
        den += e;
      }
      if (!std::isfinite(den) || den <= 0.0) throw NumericalError("cpd_nonrigid: non-finite posterior");
      p.col(j) /= den;
      log_sum += std::log(den);
    }
    if (!p.allFinite()) throw NumericalError("cpd_nonrigid: NaN in E-step");
    const Eigen::VectorXd p1 = p.rowwise().sum();
    const Eigen::VectorXd pt1 = p.colwise().sum().transpose();
    const MatX3 px = p * x;
    const double np = p1.sum();
    if (np < 1e-12) {
      result.converged = true;
      break;
    }

    const double l = -log_sum + dim * np * std::log(sigma2) / 2.0 + cfg.lambda / 2.0 * (w.transpose() * g * w).trace();
    const double change = std::abs(l - prev_l) / std::max(std::abs(l), 1e-300);
    prev_l = l;

    // M-step: (diag(P1) G + lambda sigma2 I) W = PX - diag(P1) Y.
    Eigen::MatrixXd a = p1.asDiagonal() * g;
    a.diagonal().array() += cfg.lambda * sigma2;
    const MatX3 rhs = px - p1.asDiagonal() * y;
    w = a.partialPivLu().solve(rhs);
    t = y + g * w;

    double num = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) num += pt1[j] * x.row(j).squaredNorm();
    num -= 2.0 * (px.array() * t.array()).sum();
    for (Eigen::Index i = 0; i < m; ++i) num += p1[i] * t.row(i).squaredNorm();
    sigma2 = std::abs(num) / (np * dim);
    if (!std::isfinite(sigma2) || !t.allFinite()) throw NumericalError("cpd_nonrigid: non-finite update");

    if (change < cfg.tolerance || sigma2 < 1e-10) {
      result.converged = true;
      break;
    }
    sigma2 = std::max(sigma2, 1e-10);
  }

  result.sigma2 = sigma2;
  result.warped = templ;
  for (Eigen::Index i = 0; i < m; ++i)
    result.warped.vertices[static_cast<std::size_t>(i)] = (t.row(i) * nx.scale + nx.mean).transpose();
  return result;
}

// ------------------------------------------------------------------ QEM

namespace {

using Quadric = Eigen::Matrix4d;

Quadric plane_quadric(const Vec3& normal, const Vec3& point, double weight) {
  Eigen::Vector4d p;
  p << normal, -normal.dot(point);
  return weight * p * p.transpose();
}

struct Candidate {
  double cost;
  int u, v;
  unsigned ver_u, ver_v;
  Vec3 position;

  bool operator>(const Candidate& o) const {
    if (cost != o.cost) return cost > o.cost;
    if (u != o.u) return u > o.u;
    return v > o.v;
  }
};

class Simplifier {
 public:
  explicit Simplifier(const LabeledSurface& s)
      : pos_(s.vertices),
        faces_(s.faces),
        face_alive_(s.faces.size(), true),
        vertex_alive_(s.size(), true),
        version_(s.size(), 0),
        vfaces_(s.size()),
        quadric_(s.size(), Quadric::Zero()),
        redirect_(s.size()),
        is_landmark_(s.size(), false) {
    for (std::size_t i = 0; i < redirect_.size(); ++i) redirect_[i] = static_cast<int>(i);
    for (int lm : s.landmarks) is_landmark_[static_cast<std::size_t>(lm)] = true;
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (int v : faces_[f]) vfaces_[static_cast<std::size_t>(v)].push_back(static_cast<int>(f));
    alive_count_ = static_cast<int>(s.size());
    build_quadrics();
  }

  bool run(int target_n) {
    for (std::size_t v = 0; v < pos_.size(); ++v) push_edges_of(static_cast<int>(v));
    while (alive_count_ > target_n) {
      if (heap_.empty()) return false;
      const Candidate c = heap_.top();
      heap_.pop();
      if (!vertex_alive_[static_cast<std::size_t>(c.u)] || !vertex_alive_[static_cast<std::size_t>(c.v)]) continue;
      if (version_[static_cast<std::size_t>(c.u)] != c.ver_u || version_[static_cast<std::size_t>(c.v)] != c.ver_v)
        continue;
      int keep = c.u, drop = c.v;
      if (is_landmark_[static_cast<std::size_t>(drop)] && !is_landmark_[static_cast<std::size_t>(keep)])
        std::swap(keep, drop);
      if (!legal(keep, drop, c.position)) continue;
      collapse(keep, drop, c.position);
    }
    return true;
  }

  LabeledSurface result(const LabeledSurface& original) const {
    LabeledSurface out;
    std::vector<int> new_index(pos_.size(), -1);
    for (std::size_t i = 0; i < pos_.size(); ++i)
      if (vertex_alive_[i]) {
        new_index[i] = static_cast<int>(out.vertices.size());
        out.vertices.push_back(pos_[i]);
        out.region.push_back(original.region[i]);
      }
    for (std::size_t f = 0; f < faces_.size(); ++f)
      if (face_alive_[f])
        out.faces.push_back({new_index[static_cast<std::size_t>(faces_[f][0])],
                             new_index[static_cast<std::size_t>(faces_[f][1])],
                             new_index[static_cast<std::size_t>(faces_[f][2])]});
    for (int lm : original.landmarks) out.landmarks.push_back(new_index[static_cast<std::size_t>(resolve(lm))]);
    return out;
  }

 private:
  void build_quadrics() {
    for (std::size_t f = 0; f < faces_.size(); ++f) {
      const auto& t = faces_[f];
      const Vec3& a = pos_[static_cast<std::size_t>(t[0])];
      const Vec3 n = (pos_[static_cast<std::size_t>(t[1])] - a).cross(pos_[static_cast<std::size_t>(t[2])] - a);
      const double len = n.norm();
      if (len == 0.0) continue;
      const Quadric q = plane_quadric(n / len, a, 0.5 * len);
      for (int v : t) quadric_[static_cast<std::size_t>(v)] += q;
    }
    // Boundary edges get a stiff perpendicular plane so open borders do not
    // shrink.
    std::map<std::pair<int, int>, std::vector<int>> edge_faces;
    for (std::size_t f = 0; f < faces_.size(); ++f)
      for (int k = 0; k < 3; ++k) {
        const int a = faces_[f][static_cast<std::size_t>(k)], b = faces_[f][static_cast<std::size_t>((k + 1) % 3)];
        edge_faces[{std::min(a, b), std::max(a, b)}].push_back(static_cast<int>(f));
      }
    for (const auto& [e, fs] : edge_faces) {
      if (fs.size() != 1) continue;
      const auto& t = faces_[static_cast<std::size_t>(fs[0])];
      const Vec3& p0 = pos_[static_cast<std::size_t>(t[0])];
      const Vec3 fn = (pos_[static_cast<std::size_t>(t[1])] - p0).cross(pos_[static_cast<std::size_t>(t[2])] - p0);
      const Vec3 edge = pos_[static_cast<std::size_t>(e.second)] - pos_[static_cast<std::size_t>(e.first)];
      Vec3 n = edge.cross(fn);
      const double len = n.norm();
      if (len == 0.0) continue;
      n /= len;
      const Quadric q = plane_quadric(n, pos_[static_cast<std::size_t>(e.first)], 1e3 * edge.squaredNorm());
      quadric_[static_cast<std::size_t>(e.first)] += q;
      quadric_[static_cast<std::size_t>(e.second)] += q;
    }
  }

  int resolve(int v) const {
    while (redirect_[static_cast<std::size_t>(v)] != v) v = redirect_[static_cast<std::size_t>(v)];
    return v;
  }

  std::vector<int> live_faces(int v) {
    auto& fs = vfaces_[static_cast<std::size_t>(v)];
    fs.erase(std::remove_if(fs.begin(), fs.end(), [&](int f) { return !face_alive_[static_cast<std::size_t>(f)]; }),
             fs.end());
    return fs;
  }

  std::set<int> neighbors(int v) {
    std::set<int> out;
    for (int f : live_faces(v))
      for (int u : faces_[static_cast<std::size_t>(f)])
        if (u != v) out.insert(u);
    return out;
  }

  bool on_boundary(int v) {
    std::map<int, int> uses;
    for (int f : live_faces(v))
      for (int u : faces_[static_cast<std::size_t>(f)])
        if (u != v) ++uses[u];
    for (const auto& [u, count] : uses)
      if (count == 1) return true;
    return false;
  }

  void push_edge(int a, int b) {
    const int u = std::min(a, b), v = std::max(a, b);
    const Quadric q = quadric_[static_cast<std::size_t>(u)] + quadric_[static_cast<std::size_t>(v)];
    const Eigen::Matrix3d a3 = q.topLeftCorner<3, 3>();
    const Vec3 b3 = q.topRightCorner<3, 1>();
    Vec3 target = 0.5 * (pos_[static_cast<std::size_t>(u)] + pos_[static_cast<std::size_t>(v)]);
    Eigen::JacobiSVD<Eigen::Matrix3d> svd(a3, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const Vec3 sv = svd.singularValues();
    if (sv[2] > 0.0 && sv[0] / sv[2] <= 1e12) target = svd.solve(-b3);
    Eigen::Vector4d h;
    h << target, 1.0;
    const double cost = std::max(0.0, h.dot(q * h));
    heap_.push({cost, u, v, version_[static_cast<std::size_t>(u)], version_[static_cast<std::size_t>(v)], target});
  }

  void push_edges_of(int v) {
    for (int u : neighbors(v)) push_edge(v, u);
  }

  bool legal(int keep, int drop, const Vec3& target) {
    if (is_landmark_[static_cast<std::size_t>(keep)] && is_landmark_[static_cast<std::size_t>(drop)]) return false;
    std::vector<int> shared_faces;
    for (int f : live_faces(keep)) {
      const auto& t = faces_[static_cast<std::size_t>(f)];
      if (std::find(t.begin(), t.end(), drop) != t.end()) shared_faces.push_back(f);
    }
    if (shared_faces.empty() || shared_faces.size() > 2) return false;
    // Link condition: the common neighbours are exactly the opposite apexes.
    std::set<int> apexes;
    for (int f : shared_faces)
      for (int u : faces_[static_cast<std::size_t>(f)])
        if (u != keep && u != drop) apexes.insert(u);
    const auto nk = neighbors(keep), nd = neighbors(drop);
    std::set<int> common;
    std::set_intersection(nk.begin(), nk.end(), nd.begin(), nd.end(), std::inserter(common, common.begin()));
    if (common != apexes) return false;
    if (shared_faces.size() == 2 && on_boundary(keep) && on_boundary(drop)) return false;
    if (alive_count_ <= 4) return false;

    // Reject collapses that flip or degenerate a surviving face.
    for (int v : {keep, drop})
      for (int f : live_faces(v)) {
        if (std::find(shared_faces.begin(), shared_faces.end(), f) != shared_faces.end()) continue;
        const auto& t = faces_[static_cast<std::size_t>(f)];
        std::array<Vec3, 3> before, after;
        for (std::size_t k = 0; k < 3; ++k) {
          before[k] = pos_[static_cast<std::size_t>(t[k])];
          after[k] = (t[k] == keep || t[k] == drop) ? target : before[k];
        }
        const Vec3 n0 = (before[1] - before[0]).cross(before[2] - before[0]);
        const Vec3 n1 = (after[1] - after[0]).cross(after[2] - after[0]);
        if (n1.norm() <= 1e-12 * std::max(n0.norm(), 1e-300)) return false;
        if (n0.dot(n1) <= 0.0) return false;
      }
    return true;
  }

  void collapse(int keep, int drop, const Vec3& target) {
    for (int f : live_faces(drop)) {
      auto& t = faces_[static_cast<std::size_t>(f)];
      if (std::find(t.begin(), t.end(), keep) != t.end()) {
        face_alive_[static_cast<std::size_t>(f)] = false;
        continue;
      }
      for (int& u : t)
        if (u == drop) u = keep;
      vfaces_[static_cast<std::size_t>(keep)].push_back(f);
    }
    vfaces_[static_cast<std::size_t>(drop)].clear();
    vertex_alive_[static_cast<std::size_t>(drop)] = false;
    redirect_[static_cast<std::size_t>(drop)] = keep;
    pos_[static_cast<std::size_t>(keep)] = target;
    quadric_[static_cast<std::size_t>(keep)] += quadric_[static_cast<std::size_t>(drop)];
    --alive_count_;

    // Re-queue everything around the survivor; link conditions of the
    // neighbouring edges may have changed too.
    const auto ring = neighbors(keep);
    ++version_[static_cast<std::size_t>(keep)];
    for (int u : ring) ++version_[static_cast<std::size_t>(u)];
    push_edges_of(keep);
    for (int u : ring)
      for (int w : neighbors(u))
        if (w != keep) push_edge(u, w);
  }

  std::vector<Vec3> pos_;
  std::vector<std::array<int, 3>> faces_;
  std::vector<bool> face_alive_;
  std::vector<bool> vertex_alive_;
  std::vector<unsigned> version_;
  std::vector<std::vector<int>> vfaces_;
  std::vector<Quadric> quadric_;
  std::vector<int> redirect_;
  std::vector<bool> is_landmark_;
  int alive_count_ = 0;
  std::priority_queue<Candidate, std::vector<Candidate>, std::greater<Candidate>> heap_;
};

}  // namespace

SimplifyResult qem_simplify(const LabeledSurface& s, int target_n) {
  if (target_n < 4) throw std::invalid_argument("qem_simplify: target_n must be >= 4");
  validate(s);
  if (static_cast<int>(s.size()) <= target_n) return {s, false};
  Simplifier simplifier(s);
  const bool reached = simplifier.run(target_n);
  return {simplifier.result(s), !reached};
}

// ------------------------------------------------------------------ remesh

Vec3 closest_point_on_triangle(const Vec3& p, const Vec3& a, const Vec3& b, const Vec3& c) {
  const Vec3 ab = b - a, ac = c - a, ap = p - a;
  const double d1 = ab.dot(ap), d2 = ac.dot(ap);
  if (d1 <= 0.0 && d2 <= 0.0) return a;
  const Vec3 bp = p - b;
  const double d3 = ab.dot(bp), d4 = ac.dot(bp);
  if (d3 >= 0.0 && d4 <= d3) return b;
  const double vc = d1 * d4 - d3 * d2;
  if (vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0) return a + (d1 / (d1 - d3)) * ab;
  const Vec3 cp = p - c;
  const double d5 = ab.dot(cp), d6 = ac.dot(cp);
  if (d6 >= 0.0 && d5 <= d6) return c;
  const double vb = d5 * d2 - d1 * d6;
  if (vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0) return a + (d2 / (d2 - d6)) * ac;
  const double va = d3 * d6 - d5 * d4;
  if (va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0) return b + ((d4 - d3) / ((d4 - d3) + (d5 - d6))) * (c - b);
  const double denom = 1.0 / (va + vb + vc);
  return a + ab * (vb * denom) + ac * (vc * denom);
}

LabeledSurface correspondence_remesh(const LabeledSurface& reference, const LabeledSurface& target) {
  if (target.faces.empty()) throw std::invalid_argument("correspondence_remesh: target has no triangles");
  LabeledSurface out = reference;
  for (auto& v : out.vertices) {
    Vec3 best = v;
    double best_d = std::numeric_limits<double>::infinity();
    for (const auto& f : target.faces) {
      const Vec3 q = closest_point_on_triangle(v, target.vertices[static_cast<std::size_t>(f[0])],
                                               target.vertices[static_cast<std::size_t>(f[1])],
                                               target.vertices[static_cast<std::size_t>(f[2])]);
      const double d = (q - v).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = q;
      }
    }
    v = best;
  }
  return out;
}

LabeledSurface correspondence_remesh(const LabeledSurface& reference, std::span<const Vec3> target) {
  if (target.empty()) throw std::invalid_argument("correspondence_remesh: empty target");
  LabeledSurface out = reference;
  for (auto& v : out.vertices) {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < target.size(); ++i) {
      const double d = (target[i] - v).squaredNorm();
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    v = target[best];
  }
  return out;
}

}  // namespace refshape
