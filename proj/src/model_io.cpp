#include "mpp/model_io.hpp"

#include <algorithm>
#include <fstream>
#include <initializer_list>
#include <sstream>

namespace mpp {

using nlohmann::json;

namespace {

[[noreturn]] void fail(const std::string& path, const std::string& msg) {
  throw ModelParseError("model file: " + path + ": " + msg, path);
}

void require_keys(const json& obj, const std::string& path, std::initializer_list<const char*> allowed,
                  std::initializer_list<const char*> required) {
  if (!obj.is_object()) fail(path.empty() ? "<root>" : path, "expected an object");
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; })) {
      fail(path.empty() ? key : path + "." + key, "unknown field");
    }
  }
  for (const char* r : required) {
    if (!obj.contains(r)) fail(path.empty() ? r : path + "." + r, "missing required field");
  }
}

std::string sub(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }
std::string idx(const std::string& path, std::size_t i) { return path + "[" + std::to_string(i) + "]"; }

std::int64_t get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) fail(path, "expected an integer");
  return j.get<std::int64_t>();
}

double get_number(const json& j, const std::string& path) {
  if (!j.is_number()) fail(path, "expected a number");
  return j.get<double>();
}

PolynomialRate parse_rate(const json& j, const std::string& path, std::size_t d) {
  require_keys(j, path, {"monomials"}, {"monomials"});
  const auto& ms = j.at("monomials");
  const auto mpath = sub(path, "monomials");
  if (!ms.is_array()) fail(mpath, "expected an array");
  PolynomialRate rate;
  for (std::size_t k = 0; k < ms.size(); ++k) {
    const auto p = idx(mpath, k);
    require_keys(ms[k], p, {"coeff", "powers"}, {"coeff", "powers"});
    Monomial m;
    m.coeff = get_number(ms[k].at("coeff"), sub(p, "coeff"));
    const auto& pw = ms[k].at("powers");
    if (!pw.is_array()) fail(sub(p, "powers"), "expected an array");
    if (pw.size() != d) fail(sub(p, "powers"), "length " + std::to_string(pw.size()) + " != d");
    for (std::size_t i = 0; i < pw.size(); ++i) {
      const auto e = get_int(pw[i], idx(sub(p, "powers"), i));
      if (e < 0) fail(idx(sub(p, "powers"), i), "negative exponent");
      m.powers.push_back(static_cast<int>(e));
    }
    rate.monomials.push_back(std::move(m));
  }
  return rate;
}

}  // namespace

PopulationModel parse_model_json(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    const auto byte = std::min<std::size_t>(e.byte, text.size());
    const int line = 1 + static_cast<int>(std::count(text.begin(), text.begin() + static_cast<long>(byte), '\n'));
    throw ModelParseError("model file: syntax error at line " + std::to_string(line) + ": " + e.what(), "", line);
  }
  require_keys(root, "", {"name", "d", "d1", "N", "x0", "jumps"}, {"d", "d1", "N", "x0", "jumps"});

  PopulationModel m;
  if (root.contains("name")) {
    if (!root.at("name").is_string()) fail("name", "expected a string");
    m.name = root.at("name").get<std::string>();
  }
  const auto d = get_int(root.at("d"), "d");
  const auto d1 = get_int(root.at("d1"), "d1");
  if (d < 1) fail("d", "must be positive");
  if (d1 < 0 || d1 > d) fail("d1", "must lie in [0, d]");
  m.d = static_cast<std::size_t>(d);
  m.d1 = static_cast<std::size_t>(d1);
  m.N = get_int(root.at("N"), "N");
  if (m.N < 1) fail("N", "must be a positive integer");

  const auto& x0 = root.at("x0");
  if (!x0.is_array() || x0.size() != m.d) fail("x0", "expected an array of length d");
  for (std::size_t i = 0; i < x0.size(); ++i) m.x0.push_back(get_number(x0[i], idx("x0", i)));

  const auto& jumps = root.at("jumps");
  if (!jumps.is_array()) fail("jumps", "expected an array");
  for (std::size_t k = 0; k < jumps.size(); ++k) {
    const auto p = idx("jumps", k);
    require_keys(jumps[k], p, {"J", "s", "rate"}, {"J", "rate"});
    JumpSpec js;
    const auto& J = jumps[k].at("J");
    if (!J.is_array() || J.size() != m.d) fail(sub(p, "J"), "expected an integer array of length d");
    for (std::size_t i = 0; i < J.size(); ++i) js.delta.push_back(static_cast<int>(get_int(J[i], idx(sub(p, "J"), i))));
    if (jumps[k].contains("s") && !jumps[k].at("s").is_null()) {
      const auto s = get_int(jumps[k].at("s"), sub(p, "s"));
      if (s < 0 || s >= d) fail(sub(p, "s"), "coordinate index out of range [0, d)");
      js.s = static_cast<std::size_t>(s);
    }
    js.rate = parse_rate(jumps[k].at("rate"), sub(p, "rate"), m.d);
    m.jumps.push_back(std::move(js));
  }
  m.check_dimensions();
  return m;
}

PopulationModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ModelParseError("cannot open model file " + path.string(), "");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_model_json(ss.str());
}

json model_to_json(const PopulationModel& model) {
  json j;
  j["name"] = model.name;
  j["d"] = model.d;
  j["d1"] = model.d1;
  j["N"] = model.N;
  j["x0"] = model.x0;
  j["jumps"] = json::array();
  for (const auto& js : model.jumps) {
    json o;
    o["J"] = js.delta;
    o["s"] = js.s ? json(*js.s) : json(nullptr);
    json ms = json::array();
    for (const auto& m : js.rate.monomials) ms.push_back({{"coeff", m.coeff}, {"powers", m.powers}});
    o["rate"] = {{"monomials", ms}};
    j["jumps"].push_back(std::move(o));
  }
  return j;
}

}  // namespace mpp
