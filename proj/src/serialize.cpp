#include "l2occg/serialize.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "l2occg/errors.hpp"

namespace l2occg {

namespace {

template <class T>
T get(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing key '") + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad value for '") + key + "': " + e.what());
  }
}

const Json& field(const Json& j, const char* key) {
  if (!j.is_object() || !j.contains(key)) throw FormatError(std::string("missing key '") + key + "'");
  return j.at(key);
}

Json matrices_to_json(const std::vector<Mat>& ms) {
  Json out = Json::array();
  for (const auto& m : ms) out.push_back(matrix_to_json(m));
  return out;
}

std::vector<Mat> matrices_from_json(const Json& j) {
  if (!j.is_array()) throw FormatError("expected an array of matrices");
  std::vector<Mat> out;
  for (const auto& m : j) out.push_back(matrix_from_json(m));
  return out;
}

}  // namespace

Json matrix_to_json(const Mat& m) {
  std::vector<double> data;
  data.reserve(static_cast<std::size_t>(m.size()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) data.push_back(m(r, c));
  return Json{{"rows", m.rows()}, {"cols", m.cols()}, {"data", data}};
}

Mat matrix_from_json(const Json& j) {
  const auto rows = get<Eigen::Index>(j, "rows");
  const auto cols = get<Eigen::Index>(j, "cols");
  const auto data = get<std::vector<double>>(j, "data");
  if (rows < 0 || cols < 0 || static_cast<std::size_t>(rows * cols) != data.size())
    throw FormatError("matrix shape does not match its data length");
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = data[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Json vector_to_json(const Vec& v) { return to_std(v); }

Vec vector_from_json(const Json& j) {
  try {
    return to_vec(j.get<std::vector<double>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("expected a numeric array: ") + e.what());
  }
}

Json to_json(const UncertaintySet& set) {
  switch (set.kind()) {
    case SetKind::box: {
      const auto& s = set.as<BoxSet>();
      return Json{{"kind", "box"}, {"theta", vector_to_json(s.theta())}, {"gamma", s.gamma()}};
    }
    case SetKind::poly: {
      const auto& s = set.as<PolySet>();
      return Json{{"kind", "poly"},
                  {"H", matrix_to_json(s.H())},
                  {"h", vector_to_json(s.h())},
                  {"theta", vector_to_json(s.box().theta())},
                  {"gamma", s.box().gamma()}};
    }
    case SetKind::ellip: {
      const auto& s = set.as<EllipSet>();
      return Json{{"kind", "ellip"},
                  {"sigma", matrix_to_json(s.sigma())},
                  {"gamma", s.gamma()},
                  {"center", vector_to_json(s.center())}};
    }
    case SetKind::gmm: {
      const auto& s = set.as<GmmSet>();
      Json comps = Json::array();
      for (const auto& c : s.components())
        comps.push_back(
            Json{{"weight", c.weight}, {"mean", vector_to_json(c.mean)}, {"cov", matrix_to_json(c.cov)}});
      return Json{{"kind", "gmm"}, {"rho", s.rho()}, {"components", comps}};
    }
  }
  return {};
}

UncertaintySet set_from_json(const Json& j) {
  const SetKind kind = set_kind_from_string(get<std::string>(j, "kind"));
  switch (kind) {
    case SetKind::box:
      return BoxSet(vector_from_json(field(j, "theta")), get<double>(j, "gamma"));
    case SetKind::poly:
      return PolySet(matrix_from_json(field(j, "H")), vector_from_json(field(j, "h")),
                     vector_from_json(field(j, "theta")), get<double>(j, "gamma"));
    case SetKind::ellip:
      return EllipSet(matrix_from_json(field(j, "sigma")), get<double>(j, "gamma"),
                      vector_from_json(field(j, "center")));
    case SetKind::gmm: {
      std::vector<GmmComponent> comps;
      for (const auto& c : field(j, "components"))
        comps.push_back({get<double>(c, "weight"), vector_from_json(field(c, "mean")), matrix_from_json(field(c, "cov"))});
      return GmmSet(std::move(comps), get<double>(j, "rho"));
    }
  }
  throw FormatError("unreachable set kind");
}

Json to_json(const HvacInstance& inst) {
  Json a = Json::array(), b = Json::array();
  for (const auto& slices : inst.a) a.push_back(matrices_to_json(slices));
  for (const auto& slices : inst.b) b.push_back(matrices_to_json(slices));
  return Json{
      {"dims", {{"n_x", inst.dims.n_x}, {"n_u", inst.dims.n_u}, {"horizon", inst.dims.horizon}, {"n_xi", inst.dims.n_xi}}},
      {"seed", inst.seed},
      {"time_varying", inst.time_varying},
      {"A0", matrices_to_json(inst.A0)},
      {"B0", matrices_to_json(inst.B0)},
      {"a", a},
      {"b", b},
      {"P", matrix_to_json(inst.P)},
      {"R", matrix_to_json(inst.R)},
      {"P_f", matrix_to_json(inst.P_f)},
      {"x_lo", vector_to_json(inst.x_lo)},
      {"x_hi", vector_to_json(inst.x_hi)},
      {"u_lo", vector_to_json(inst.u_lo)},
      {"u_hi", vector_to_json(inst.u_hi)},
      {"du_lo", vector_to_json(inst.du_lo)},
      {"du_hi", vector_to_json(inst.du_hi)},
      {"x_init", vector_to_json(inst.x_init)},
      {"h1_quad", matrix_to_json(inst.h1_quad)},
      {"h1_lin", vector_to_json(inst.h1_lin)},
      {"w_slack", inst.w_slack},
  };
}

HvacInstance instance_from_json(const Json& j) {
  HvacInstance inst;
  const Json& d = field(j, "dims");
  inst.dims = {get<int>(d, "n_x"), get<int>(d, "n_u"), get<int>(d, "horizon"), get<int>(d, "n_xi")};
  inst.seed = get<std::uint64_t>(j, "seed");
  inst.time_varying = get<bool>(j, "time_varying");
  inst.A0 = matrices_from_json(field(j, "A0"));
  inst.B0 = matrices_from_json(field(j, "B0"));
  for (const auto& s : field(j, "a")) inst.a.push_back(matrices_from_json(s));
  for (const auto& s : field(j, "b")) inst.b.push_back(matrices_from_json(s));
  inst.P = matrix_from_json(field(j, "P"));
  inst.R = matrix_from_json(field(j, "R"));
  inst.P_f = matrix_from_json(field(j, "P_f"));
  inst.x_lo = vector_from_json(field(j, "x_lo"));
  inst.x_hi = vector_from_json(field(j, "x_hi"));
  inst.u_lo = vector_from_json(field(j, "u_lo"));
  inst.u_hi = vector_from_json(field(j, "u_hi"));
  inst.du_lo = vector_from_json(field(j, "du_lo"));
  inst.du_hi = vector_from_json(field(j, "du_hi"));
  inst.x_init = vector_from_json(field(j, "x_init"));
  inst.h1_quad = matrix_from_json(field(j, "h1_quad"));
  inst.h1_lin = vector_from_json(field(j, "h1_lin"));
  inst.w_slack = get<double>(j, "w_slack");
  inst.validate();
  return inst;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string set_spec_hash(const UncertaintySet& set) { return hex64(fnv1a(to_json(set).dump())); }

std::string read_text(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + path.string() + "' for reading");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::filesystem::path& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open '" + path.string() + "' for writing");
  out << text;
  if (!out) throw FormatError("write to '" + path.string() + "' failed");
}

Json read_json(const std::filesystem::path& path) {
  try {
    return Json::parse(read_text(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const Json& j) { write_text(path, j.dump(2) + "\n"); }

}  // namespace l2occg
