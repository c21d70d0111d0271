#include "l2occg/value_net.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>
#include <sstream>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

constexpr int kCheckpointVersion = 1;
constexpr const char* kCheckpointFormat = "l2occg.value_net";

std::vector<Dense> make_mlp(int in, const std::vector<int>& widths, Rng& rng, bool zero) {
  std::vector<Dense> layers;
  for (int w : widths) {
    Dense d{Mat::Zero(in, w), Vec::Zero(w)};
    if (!zero) {
      // He-uniform for ReLU layers.
      const double a = std::sqrt(6.0 / in);
      std::uniform_real_distribution<double> u(-a, a);
      for (Eigen::Index j = 0; j < d.W.cols(); ++j)
        for (Eigen::Index i = 0; i < d.W.rows(); ++i) d.W(i, j) = u(rng);
    }
    layers.push_back(std::move(d));
    in = w;
  }
  return layers;
}

ValueNetParams build(const ValueNetArch& arch, std::uint64_t seed, bool zero) {
  arch.validate();
  Rng rng(seed);
  ValueNetParams p;
  p.arch = arch;
  p.elem_x = make_mlp(1, arch.elem, rng, zero);
  p.elem_xi = make_mlp(1, arch.elem, rng, zero);
  p.post_x = make_mlp(arch.elem.back(), {arch.post}, rng, zero);
  p.post_xi = make_mlp(arch.elem.back(), {arch.post}, rng, zero);
  std::vector<int> head = arch.head;
  head.push_back(2);
  p.head = make_mlp(2 * arch.post, head, rng, zero);
  return p;
}

template <class F>
void for_each_group(const ValueNetParams& p, F&& f) {
  f(p.elem_x);
  f(p.elem_xi);
  f(p.post_x);
  f(p.post_xi);
  f(p.head);
}

// ---- fast dense path ------------------------------------------------------

Mat relu(Mat z) { return z.cwiseMax(0.0); }

Mat affine(const Mat& x, const Dense& d) {
  Mat z = x * d.W;
  z.rowwise() += d.b.transpose();
  return z;
}

// Element MLP on a column of scalars, summed over consecutive groups of
// `group` rows, then the post MLP. Keeps activations for the backward pass.
struct BranchActs {
  std::vector<Mat> elem;  // post-ReLU activations per element layer
  Mat pooled;
  std::vector<Mat> post_layers;  // post-ReLU activations per post layer
  Mat post;
};

BranchActs run_branch(const std::vector<Dense>& elem, const std::vector<Dense>& post, const Mat& scalars,
                      Eigen::Index group) {
  BranchActs a;
  Mat h = scalars;
  for (const auto& layer : elem) {
    h = relu(affine(h, layer));
    a.elem.push_back(h);
  }
  const Eigen::Index rows = h.rows() / group;
  a.pooled = Mat::Zero(rows, h.cols());
  for (Eigen::Index r = 0; r < h.rows(); ++r) a.pooled.row(r / group) += h.row(r);
  Mat e = a.pooled;
  for (const auto& layer : post) {
    e = relu(affine(e, layer));
    a.post_layers.push_back(e);
  }
  a.post = e;
  return a;
}

// Rows of `m` as scalars: row r, column j becomes entry r * cols + j.
Mat flatten_rows(const Mat& m) {
  Mat s(m.rows() * m.cols(), 1);
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index j = 0; j < m.cols(); ++j) s(r * m.cols() + j, 0) = m(r, j);
  return s;
}

// ---- tape path ------------------------------------------------------------

struct LayerNodes {
  diff::NodeId W, b;
};

struct NetNodes {
  std::vector<LayerNodes> elem_x, elem_xi, post_x, post_xi, head;
};

diff::NodeId tape_mlp(diff::Tape& t, diff::NodeId h, const std::vector<LayerNodes>& layers, bool relu_last) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    h = t.add(t.matmul(h, layers[i].W), layers[i].b);
    if (relu_last || i + 1 < layers.size()) h = t.relu(h);
  }
  return h;
}

diff::NodeId tape_forward(diff::Tape& t, const NetNodes& w, diff::NodeId u_col, diff::NodeId xi_col, std::size_t n_u,
                          std::size_t n_xi) {
  const auto ex = tape_mlp(t, t.sum_pool(tape_mlp(t, u_col, w.elem_x, true), n_u), w.post_x, true);
  const auto exi = tape_mlp(t, t.sum_pool(tape_mlp(t, xi_col, w.elem_xi, true), n_xi), w.post_xi, true);
  return tape_mlp(t, t.concat_cols(ex, exi), w.head, false);
}

NetNodes record_params(diff::Tape& t, const std::vector<diff::Tensor>& packed, const ValueNetParams& p) {
  NetNodes n;
  std::size_t k = 0;
  auto take = [&](const std::vector<Dense>& group, std::vector<LayerNodes>& out) {
    for (std::size_t i = 0; i < group.size(); ++i) {
      const auto W = t.variable(packed[k++]);
      const auto b = t.variable(packed[k++]);
      out.push_back({W, b});
    }
  };
  take(p.elem_x, n.elem_x);
  take(p.elem_xi, n.elem_xi);
  take(p.post_x, n.post_x);
  take(p.post_xi, n.post_xi);
  take(p.head, n.head);
  return n;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_double(std::string_view s, const std::string& where) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw FormatError(where + ": bad number '" + std::string(s) + "'");
  return v;
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(line);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

Json layers_to_json(const std::vector<Dense>& layers) {
  Json arr = Json::array();
  for (const auto& d : layers) arr.push_back({{"W", matrix_to_json(d.W)}, {"b", vector_to_json(d.b)}});
  return arr;
}

std::vector<Dense> layers_from_json(const Json& j, const std::vector<Dense>& shape_of, const std::string& name) {
  if (!j.is_array() || j.size() != shape_of.size()) throw FormatError("value net checkpoint: bad layer list " + name);
  std::vector<Dense> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    Dense d{matrix_from_json(j[i].at("W")), vector_from_json(j[i].at("b"))};
    if (d.W.rows() != shape_of[i].W.rows() || d.W.cols() != shape_of[i].W.cols() || d.b.size() != shape_of[i].b.size())
      throw FormatError("value net checkpoint: layer shape mismatch in " + name);
    out.push_back(std::move(d));
  }
  return out;
}

}  // namespace

void ValueNetArch::validate() const {
  if (elem.empty() || post < 1 || head.empty()) throw ContractError("ValueNetArch: empty layer list");
  for (int w : elem)
    if (w < 1) throw ContractError("ValueNetArch: widths must be positive");
  for (int w : head)
    if (w < 1) throw ContractError("ValueNetArch: widths must be positive");
}

ValueNetParams ValueNetParams::init(const ValueNetArch& arch, std::uint64_t seed) { return build(arch, seed, false); }
ValueNetParams ValueNetParams::zeros(const ValueNetArch& arch) { return build(arch, 0, true); }

std::vector<diff::Tensor> ValueNetParams::pack() const {
  std::vector<diff::Tensor> out;
  for_each_group(*this, [&](const std::vector<Dense>& g) {
    for (const auto& d : g) {
      out.push_back(diff::Tensor::from_eigen(d.W));
      out.push_back(diff::Tensor::from_eigen(d.b.transpose()));
    }
  });
  return out;
}

void ValueNetParams::unpack(std::span<const diff::Tensor> t) {
  std::size_t k = 0;
  auto put = [&](std::vector<Dense>& g) {
    for (auto& d : g) {
      if (k + 2 > t.size()) throw DimensionError("ValueNetParams::unpack: too few tensors");
      const Mat W = t[k++].to_eigen();
      const Mat b = t[k++].to_eigen();
      if (W.rows() != d.W.rows() || W.cols() != d.W.cols() || b.size() != d.b.size())
        throw DimensionError("ValueNetParams::unpack: shape mismatch");
      d.W = W;
      d.b = b.transpose();
    }
  };
  put(elem_x);
  put(elem_xi);
  put(post_x);
  put(post_xi);
  put(head);
  if (k != t.size()) throw DimensionError("ValueNetParams::unpack: too many tensors");
}

std::size_t ValueNetParams::parameter_count() const {
  std::size_t n = 0;
  for_each_group(*this, [&](const std::vector<Dense>& g) {
    for (const auto& d : g) n += static_cast<std::size_t>(d.W.size() + d.b.size());
  });
  return n;
}

double normalize_obj(const NormStats& s, double q) { return (q - s.obj_min) / s.obj_range(); }
double denormalize_obj(const NormStats& s, double t) { return s.obj_min + t * s.obj_range(); }
double normalize_fea(const NormStats& s, double q) { return (q - s.fea_min) / s.fea_range(); }
double denormalize_fea(const NormStats& s, double t) { return s.fea_min + t * s.fea_range(); }

SurrogateEval::SurrogateEval(const ValueNetParams& p, const Vec& u0) : p_(&p) {
  if (u0.size() < 1) throw DimensionError("SurrogateEval: empty u0");
  const Mat ex = run_branch(p.elem_x, p.post_x, u0, u0.size()).post;
  const Dense& first = p.head.front();
  head_bias_ = ex * first.W.topRows(p.arch.post) + first.b.transpose();
}

Mat SurrogateEval::outputs(const Mat& xis) const {
  Mat g;
  return outputs_and_grad(xis, {}, g);
}

Mat SurrogateEval::outputs_and_grad(const Mat& xis, const std::function<Mat(const Mat&)>& weigh, Mat& grad) const {
  const ValueNetParams& p = *p_;
  const Eigen::Index m = xis.rows(), n = xis.cols();
  if (m < 1 || n < 1) throw DimensionError("SurrogateEval: empty xi batch");
  const BranchActs br = run_branch(p.elem_xi, p.post_xi, flatten_rows(xis), n);

  // Head with the u0 branch folded into the first layer's bias.
  std::vector<Mat> hs;
  Mat z = br.post * p.head.front().W.bottomRows(p.arch.post);
  z.rowwise() += head_bias_;
  Mat h = p.head.size() > 1 ? relu(z) : z;
  hs.push_back(h);
  for (std::size_t i = 1; i < p.head.size(); ++i) {
    h = affine(h, p.head[i]);
    if (i + 1 < p.head.size()) h = relu(h);
    hs.push_back(h);
  }
  const Mat out = h;
  if (!out.allFinite()) throw NumericError("SurrogateEval: non-finite output");
  if (!weigh) return out;

  Mat d = weigh(out);
  if (d.rows() != m || d.cols() != 2) throw DimensionError("SurrogateEval: weights must match the outputs");
  for (std::size_t i = p.head.size(); i-- > 1;) {
    d = d * p.head[i].W.transpose();
    d = d.cwiseProduct((hs[i - 1].array() > 0.0).cast<double>().matrix());
  }
  // Into the xi embedding, through its ReLU.
  d = d * p.head.front().W.bottomRows(p.arch.post).transpose();
  for (std::size_t i = p.post_xi.size(); i-- > 0;) {
    d = d.cwiseProduct((br.post_layers[i].array() > 0.0).cast<double>().matrix());
    d = d * p.post_xi[i].W.transpose();
  }
  // Sum pooling copies the pooled gradient to every coordinate row.
  Mat de(m * n, d.cols());
  for (Eigen::Index r = 0; r < m * n; ++r) de.row(r) = d.row(r / n);
  for (std::size_t i = p.elem_xi.size(); i-- > 0;) {
    de = de.cwiseProduct((br.elem[i].array() > 0.0).cast<double>().matrix());
    de = de * p.elem_xi[i].W.transpose();
  }
  grad.resize(m, n);
  for (Eigen::Index r = 0; r < m; ++r)
    for (Eigen::Index j = 0; j < n; ++j) grad(r, j) = de(r * n + j, 0);
  return out;
}

Vec encode(const ValueNetParams& p, const Vec& u0, const Vec& xi) {
  if (u0.size() < 1 || xi.size() < 1) throw DimensionError("encode: empty input");
  const Mat ex = run_branch(p.elem_x, p.post_x, u0, u0.size()).post;
  const Mat exi = run_branch(p.elem_xi, p.post_xi, xi, xi.size()).post;
  Vec e(ex.cols() + exi.cols());
  e << ex.transpose(), exi.transpose();
  return e;
}

Prediction forward(const ValueNetParams& p, const Vec& u0, const Vec& xi) {
  const Mat out = SurrogateEval(p, u0).outputs(xi.transpose());
  return {denormalize_obj(p.norm, out(0, 0)), denormalize_fea(p.norm, out(0, 1))};
}

XiGradients grad_wrt_xi(const ValueNetParams& p, const Vec& u0, const Vec& xi) {
  const SurrogateEval ev(p, u0);
  Mat g_obj, g_fea;
  ev.outputs_and_grad(xi.transpose(), [](const Mat& o) { return Mat(Eigen::RowVector2d(1.0, 0.0).replicate(o.rows(), 1)); },
                      g_obj);
  ev.outputs_and_grad(xi.transpose(), [](const Mat& o) { return Mat(Eigen::RowVector2d(0.0, 1.0).replicate(o.rows(), 1)); },
                      g_fea);
  return {g_obj.row(0).transpose() * p.norm.obj_range(), g_fea.row(0).transpose() * p.norm.fea_range()};
}

// ---- datasets -------------------------------------------------------------

Vec push_outside(const UncertaintySet& set, const Vec& inside, double scale, Rng& rng) {
  if (inside.size() != set.dim()) throw DimensionError("push_outside: xi has the wrong length");
  if (!(scale > 1.0)) throw ContractError("push_outside: scale must exceed 1");
  Vec anchor = Vec::Zero(set.dim());
  if (set.kind() == SetKind::ellip) anchor = set.as<EllipSet>().center();
  if (set.kind() == SetKind::gmm) {
    const auto& g = set.as<GmmSet>();
    anchor = g.components()[g.nearest_component(inside)].mean;
  }
  Vec dir = inside - anchor;
  if (dir.norm() < 1e-12) {
    std::normal_distribution<double> nd;
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir[i] = nd(rng);
    dir *= 1e-3 / dir.norm();
  }
  // Boundary distance along the ray, in units of dir.
  double lo = 0.0, hi = 1.0;
  int grow = 0;
  while (contains(set, anchor + hi * dir, 0.0)) {
    lo = hi;
    hi *= 2.0;
    if (++grow > 60) throw ContractError("push_outside: set is unbounded along the ray");
  }
  for (int it = 0; it < 80; ++it) {
    const double mid = 0.5 * (lo + hi);
    (contains(set, anchor + mid * dir, 0.0) ? lo : hi) = mid;
  }
  return anchor + scale * hi * dir;
}

RecourseDataset generate_dataset(const HvacInstance& inst, const UncertaintySet& set, int n_samples,
                                 std::uint64_t seed, const DatasetOptions& options) {
  if (n_samples < 1) throw ContractError("generate_dataset: n_samples must be positive");
  if (set.dim() != inst.dims.n_xi) throw DimensionError("generate_dataset: set and instance disagree on n_xi");
  if (!(options.u0_margin >= 0.0 && options.u0_margin < 0.5)) throw ContractError("generate_dataset: margin out of range");
  if (!(options.out_of_set_fraction >= 0.0 && options.out_of_set_fraction <= 1.0))
    throw ContractError("generate_dataset: out-of-set fraction out of range");

  RecourseDataset data;
  data.instance_seed = inst.seed;
  data.set_spec = set_spec_hash(set);
  data.w_slack = inst.w_slack;
  data.records.resize(static_cast<std::size_t>(n_samples));
  std::atomic<int> dropped{0};
  const Vec width = inst.u_hi - inst.u_lo;
  const Vec lo = inst.u_lo + options.u0_margin * width;
  const Vec span = (1.0 - 2.0 * options.u0_margin) * width;
  const double f = options.out_of_set_fraction;

  for_each_index(data.records.size(), options.exec, [&](std::size_t i) {
    // Exactly round(f * n) records land outside, spread evenly.
    const bool outside = std::floor(static_cast<double>(i + 1) * f) > std::floor(static_cast<double>(i) * f);
    for (int attempt = 0; attempt <= options.max_resamples; ++attempt) {
      Rng rng(mix_seed(mix_seed(seed, i), static_cast<std::uint64_t>(attempt)));
      std::uniform_real_distribution<double> unit(0.0, 1.0);
      RecourseRecord rec;
      rec.u0.resize(inst.dims.n_u);
      for (int j = 0; j < inst.dims.n_u; ++j) rec.u0[j] = lo[j] + span[j] * unit(rng);
      rec.xi = sample(set, rng);
      if (outside) {
        const double s = options.out_scale_lo + (options.out_scale_hi - options.out_scale_lo) * unit(rng);
        rec.xi = push_outside(set, rec.xi, s, rng);
      }
      const RecourseResult r = eval_value_function(inst, rec.u0, rec.xi, options.qp);
      if (r.status == RecourseStatus::solver_limit) {
        ++dropped;
        continue;
      }
      rec.q_obj = r.q_obj;
      rec.q_fea = r.q_fea;
      data.records[i] = std::move(rec);
      return;
    }
    throw NumericError("generate_dataset: record " + std::to_string(i) + " failed after every resample");
  });
  data.dropped = dropped;
  if (data.dropped > 0) std::cerr << "generate_dataset: resampled " << data.dropped << " solver failures\n";
  return data;
}

RecourseDataset pool_datasets(const std::vector<RecourseDataset>& parts) {
  if (parts.empty()) throw ContractError("pool_datasets: nothing to pool");
  RecourseDataset out;
  out.instance_seed = parts.front().instance_seed;
  out.w_slack = parts.front().w_slack;
  for (const auto& p : parts) {
    if (p.instance_seed != out.instance_seed || p.w_slack != out.w_slack)
      throw ContractError("pool_datasets: parts come from different instances");
    out.set_spec += (out.set_spec.empty() ? "" : "+") + p.set_spec;
    out.dropped += p.dropped;
    out.records.insert(out.records.end(), p.records.begin(), p.records.end());
  }
  return out;
}

void write_dataset_csv(const std::filesystem::path& path, const RecourseDataset& data) {
  if (data.records.empty()) throw ContractError("write_dataset_csv: empty dataset");
  const auto n_u = data.records.front().u0.size();
  const auto n_xi = data.records.front().xi.size();
  std::ostringstream os;
  os << "#instance_seed=" << data.instance_seed << "\n";
  os << "#set_spec=" << data.set_spec << "\n";
  os << "#w_slack=" << format_double(data.w_slack) << "\n";
  for (Eigen::Index j = 0; j < n_u; ++j) os << "u0_" << j << ",";
  for (Eigen::Index j = 0; j < n_xi; ++j) os << "xi_" << j << ",";
  os << "q_obj,q_fea\n";
  for (const auto& r : data.records) {
    if (r.u0.size() != n_u || r.xi.size() != n_xi) throw DimensionError("write_dataset_csv: ragged records");
    for (Eigen::Index j = 0; j < n_u; ++j) os << format_double(r.u0[j]) << ",";
    for (Eigen::Index j = 0; j < n_xi; ++j) os << format_double(r.xi[j]) << ",";
    os << format_double(r.q_obj) << "," << format_double(r.q_fea) << "\n";
  }
  write_text(path, os.str());
}

RecourseDataset read_dataset_csv(const std::filesystem::path& path) {
  const std::string where = "dataset " + path.string();
  std::istringstream is(read_text(path));
  RecourseDataset data;
  std::string line;
  bool have_seed = false, have_spec = false, have_w = false;
  Eigen::Index n_u = -1, n_xi = -1;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError(where + ": bad preamble line");
      const std::string key = line.substr(1, eq - 1), value = line.substr(eq + 1);
      if (key == "instance_seed") {
        data.instance_seed = std::stoull(value);
        have_seed = true;
      } else if (key == "set_spec") {
        data.set_spec = value;
        have_spec = true;
      } else if (key == "w_slack") {
        data.w_slack = parse_double(value, where);
        have_w = true;
      }
      continue;
    }
    const auto cells = split(line, ',');
    if (n_u < 0) {
      n_u = static_cast<Eigen::Index>(std::count_if(cells.begin(), cells.end(), [](const std::string& c) { return c.rfind("u0_", 0) == 0; }));
      n_xi = static_cast<Eigen::Index>(std::count_if(cells.begin(), cells.end(), [](const std::string& c) { return c.rfind("xi_", 0) == 0; }));
      if (n_u < 1 || n_xi < 1 || static_cast<Eigen::Index>(cells.size()) != n_u + n_xi + 2 || cells[cells.size() - 2] != "q_obj" ||
          cells.back() != "q_fea")
        throw FormatError(where + ": bad header");
      continue;
    }
    if (static_cast<Eigen::Index>(cells.size()) != n_u + n_xi + 2) throw FormatError(where + ": wrong column count");
    RecourseRecord r;
    r.u0.resize(n_u);
    r.xi.resize(n_xi);
    for (Eigen::Index j = 0; j < n_u; ++j) r.u0[j] = parse_double(cells[static_cast<std::size_t>(j)], where);
    for (Eigen::Index j = 0; j < n_xi; ++j) r.xi[j] = parse_double(cells[static_cast<std::size_t>(n_u + j)], where);
    r.q_obj = parse_double(cells[cells.size() - 2], where);
    r.q_fea = parse_double(cells.back(), where);
    if (r.q_fea < 0.0) throw FormatError(where + ": negative q_fea");
    data.records.push_back(std::move(r));
  }
  if (!have_seed || !have_spec || !have_w) throw FormatError(where + ": missing preamble");
  if (n_u < 0) throw FormatError(where + ": missing header");
  return data;
}

// ---- training -------------------------------------------------------------

NormStats compute_norm_stats(const RecourseDataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ContractError("compute_norm_stats: empty subset");
  NormStats s;
  s.obj_min = s.fea_min = std::numeric_limits<double>::infinity();
  s.obj_max = s.fea_max = -std::numeric_limits<double>::infinity();
  for (auto i : idx) {
    const auto& r = data.records[i];
    s.obj_min = std::min(s.obj_min, r.q_obj);
    s.obj_max = std::max(s.obj_max, r.q_obj);
    s.fea_min = std::min(s.fea_min, r.q_fea);
    s.fea_max = std::max(s.fea_max, r.q_fea);
  }
  if (!(s.obj_max > s.obj_min)) s.obj_max = s.obj_min + 1.0;
  if (!(s.fea_max > s.fea_min)) s.fea_max = s.fea_min + 1.0;
  return s;
}

double normalized_mse(const ValueNetParams& p, const RecourseDataset& data, const std::vector<std::size_t>& idx) {
  if (idx.empty()) throw ContractError("normalized_mse: empty subset");
  double acc = 0.0;
  for (auto i : idx) {
    const auto& r = data.records[i];
    const Mat out = SurrogateEval(p, r.u0).outputs(r.xi.transpose());
    const double eo = out(0, 0) - normalize_obj(p.norm, r.q_obj);
    const double ef = out(0, 1) - normalize_fea(p.norm, r.q_fea);
    acc += eo * eo + ef * ef;
  }
  return acc / (2.0 * static_cast<double>(idx.size()));
}

TrainedValueNet train_value_net(const RecourseDataset& data, const ValueNetArch& arch, const TrainHyper& hyper) {
  const std::size_t total = data.records.size();
  if (total < 2) throw ContractError("train_value_net: need at least two records");
  if (hyper.batch < 1 || hyper.epochs < 0 || hyper.patience < 1 || !(hyper.lr > 0.0) ||
      !(hyper.val_frac > 0.0 && hyper.val_frac < 1.0))
    throw ContractError("train_value_net: bad hyperparameters");
  const auto n_u = static_cast<std::size_t>(data.records.front().u0.size());
  const auto n_xi = static_cast<std::size_t>(data.records.front().xi.size());
  for (const auto& r : data.records)
    if (static_cast<std::size_t>(r.u0.size()) != n_u || static_cast<std::size_t>(r.xi.size()) != n_xi)
      throw DimensionError("train_value_net: ragged records");

  TrainedValueNet out;
  std::vector<std::size_t> order(total);
  std::iota(order.begin(), order.end(), 0);
  Rng split_rng(mix_seed(hyper.seed, 0));
  std::shuffle(order.begin(), order.end(), split_rng);
  const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(hyper.val_frac * static_cast<double>(total))), 1,
                                             total - 1);
  out.val_idx.assign(order.end() - static_cast<long>(n_val), order.end());
  out.train_idx.assign(order.begin(), order.end() - static_cast<long>(n_val));

  ValueNetParams params = ValueNetParams::init(arch, mix_seed(hyper.seed, 1));
  params.norm = compute_norm_stats(data, out.train_idx);
  if (out.train_idx.size() * 50 < 10 * params.parameter_count())
    std::cerr << "train_value_net: warning: " << out.train_idx.size() << " training records for "
              << params.parameter_count() << " parameters\n";

  std::vector<diff::Tensor> weights = params.pack();
  diff::Adam adam(hyper.lr);
  out.params = params;
  out.history.best_val = normalized_mse(params, data, out.val_idx);
  out.history.best_epoch = 0;
  int since_best = 0;
  std::vector<std::size_t> train = out.train_idx;
  Rng epoch_rng(mix_seed(hyper.seed, 2));

  for (int epoch = 1; epoch <= hyper.epochs; ++epoch) {
    std::shuffle(train.begin(), train.end(), epoch_rng);
    double loss_sum = 0.0;
    bool bad = false;
    for (std::size_t start = 0; start < train.size(); start += static_cast<std::size_t>(hyper.batch)) {
      const std::size_t end = std::min(train.size(), start + static_cast<std::size_t>(hyper.batch));
      const std::size_t b = end - start;
      std::vector<double> u(b * n_u), x(b * n_xi), y(b * 2);
      for (std::size_t k = 0; k < b; ++k) {
        const auto& r = data.records[train[start + k]];
        for (std::size_t j = 0; j < n_u; ++j) u[k * n_u + j] = r.u0[static_cast<Eigen::Index>(j)];
        for (std::size_t j = 0; j < n_xi; ++j) x[k * n_xi + j] = r.xi[static_cast<Eigen::Index>(j)];
        y[2 * k] = normalize_obj(params.norm, r.q_obj);
        y[2 * k + 1] = normalize_fea(params.norm, r.q_fea);
      }
      try {
        diff::Tape tape;
        const NetNodes nodes = record_params(tape, weights, params);
        const auto uc = tape.constant(diff::Tensor::matrix(b * n_u, 1, std::move(u)));
        const auto xc = tape.constant(diff::Tensor::matrix(b * n_xi, 1, std::move(x)));
        const auto target = tape.constant(diff::Tensor::matrix(b, 2, std::move(y)));
        const auto loss = tape.mse(tape_forward(tape, nodes, uc, xc, n_u, n_xi), target);
        const auto grads = tape.backward(loss);
        std::vector<diff::Tensor> g;
        g.reserve(weights.size());
        for (diff::NodeId id = 0; id < weights.size(); ++id) g.push_back(grads[id]);
        adam.step(weights, g);
        loss_sum += tape.value(loss).item() * static_cast<double>(b);
      } catch (const NumericError&) {
        bad = true;
        break;
      }
    }
    if (!bad) {
      for (const auto& w : weights)
        if (!w.all_finite()) bad = true;
    }
    if (bad) {
      out.history.diverged = true;
      std::cerr << "train_value_net: non-finite loss at epoch " << epoch << "; keeping the best checkpoint\n";
      break;
    }
    params.unpack(weights);
    const double train_loss = loss_sum / static_cast<double>(train.size());
    const double val = normalized_mse(params, data, out.val_idx);
    out.history.train_loss.push_back(train_loss);
    out.history.val_loss.push_back(val);
    if (hyper.verbose) std::cerr << "epoch " << epoch << " train " << train_loss << " val " << val << "\n";
    if (val < out.history.best_val) {
      out.history.best_val = val;
      out.history.best_epoch = epoch;
      out.params = params;
      since_best = 0;
    } else if (++since_best >= hyper.patience) {
      break;
    }
  }
  return out;
}

// ---- checkpoints ----------------------------------------------------------

Json to_json(const ValueNetParams& p) {
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["arch"] = {{"elem", p.arch.elem}, {"post", p.arch.post}, {"head", p.arch.head}};
  j["norm"] = {{"obj_min", p.norm.obj_min}, {"obj_max", p.norm.obj_max}, {"fea_min", p.norm.fea_min}, {"fea_max", p.norm.fea_max}};
  j["elem_x"] = layers_to_json(p.elem_x);
  j["elem_xi"] = layers_to_json(p.elem_xi);
  j["post_x"] = layers_to_json(p.post_x);
  j["post_xi"] = layers_to_json(p.post_xi);
  j["head"] = layers_to_json(p.head);
  return j;
}

ValueNetParams value_net_from_json(const Json& j) {
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat) throw FormatError("value net checkpoint: wrong format tag");
    if (j.at("version").get<int>() != kCheckpointVersion)
      throw FormatError("value net checkpoint: unsupported version " + std::to_string(j.at("version").get<int>()));
    ValueNetArch arch;
    arch.elem = j.at("arch").at("elem").get<std::vector<int>>();
    arch.post = j.at("arch").at("post").get<int>();
    arch.head = j.at("arch").at("head").get<std::vector<int>>();
    ValueNetParams p = ValueNetParams::zeros(arch);
    p.elem_x = layers_from_json(j.at("elem_x"), p.elem_x, "elem_x");
    p.elem_xi = layers_from_json(j.at("elem_xi"), p.elem_xi, "elem_xi");
    p.post_x = layers_from_json(j.at("post_x"), p.post_x, "post_x");
    p.post_xi = layers_from_json(j.at("post_xi"), p.post_xi, "post_xi");
    p.head = layers_from_json(j.at("head"), p.head, "head");
    const Json& n = j.at("norm");
    p.norm = {n.at("obj_min").get<double>(), n.at("obj_max").get<double>(), n.at("fea_min").get<double>(),
              n.at("fea_max").get<double>()};
    if (!(p.norm.obj_range() > 0.0) || !(p.norm.fea_range() > 0.0)) throw FormatError("value net checkpoint: degenerate norm stats");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("value net checkpoint: ") + e.what());
  } catch (const ContractError& e) {
    throw FormatError(std::string("value net checkpoint: ") + e.what());
  }
}

void save_value_net(const std::filesystem::path& path, const ValueNetParams& p) { write_json(path, to_json(p)); }
ValueNetParams load_value_net(const std::filesystem::path& path) { return value_net_from_json(read_json(path)); }

}  // namespace l2occg
