#include "cloaksim/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <initializer_list>
#include <sstream>

#include "json.hpp"

namespace cloaksim::config {

namespace {

using nlohmann::json;

// 1-based line of the first occurrence of "key" in the raw text; 0 if absent.
// Nested blocks can repeat a key name, so the line is the first plausible
// site, which is exact for top-level keys and close for the rest.
int key_line(const std::string& text, const std::string& key) {
  auto pos = text.find('"' + key + '"');
  if (pos == std::string::npos) return 0;
  return 1 + int(std::count(text.begin(), text.begin() + std::ptrdiff_t(pos), '\n'));
}

struct Ctx {
  const std::string& origin;
  const std::string& text;
};

[[noreturn]] void fail(const Ctx& c, const std::string& key, const std::string& msg) {
  int ln = key_line(c.text, key);
  std::ostringstream os;
  os << c.origin << ':' << (ln ? ln : 1) << ": \"" << key << "\" " << msg;
  throw ConfigError(os.str());
}

const json& need(const Ctx& c, const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) fail(c, key, "is required");
  return *it;
}

double need_num(const Ctx& c, const json& j, const char* key) {
  const json& v = need(c, j, key);
  if (!v.is_number()) fail(c, key, "must be a number");
  double d = v.get<double>();
  if (!std::isfinite(d)) fail(c, key, "must be finite");
  return d;
}

long long need_int(const Ctx& c, const json& j, const char* key) {
  const json& v = need(c, j, key);
  if (!v.is_number_integer()) fail(c, key, "must be an integer");
  return v.get<long long>();
}

std::string need_str(const Ctx& c, const json& j, const char* key) {
  const json& v = need(c, j, key);
  if (!v.is_string()) fail(c, key, "must be a string");
  return v.get<std::string>();
}

double opt_num(const Ctx& c, const json& j, const char* key, double dflt) {
  return j.contains(key) ? need_num(c, j, key) : dflt;
}

long long opt_int(const Ctx& c, const json& j, const char* key, long long dflt) {
  return j.contains(key) ? need_int(c, j, key) : dflt;
}

void reject_unknown(const Ctx& c, const json& j, const char* block,
                    std::initializer_list<const char*> allowed) {
  for (const auto& item : j.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || item.key() == a;
    if (!ok) fail(c, item.key(), std::string("is not a recognized key in ") + block);
  }
}

int int_in(const Ctx& c, const json& j, const char* key, long long dflt, long long lo,
           long long hi) {
  long long v = opt_int(c, j, key, dflt);
  if (v < lo || v > hi)
    fail(c, key, "must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return int(v);
}

bool experiment_from(const std::string& name, Experiment& out) {
  for (Experiment e :
       {Experiment::cloak_demo, Experiment::delta_sweep, Experiment::resonance_map,
        Experiment::three_spheres, Experiment::proof_pipeline, Experiment::oracle_compare}) {
    if (name == experiment_name(e)) {
      out = e;
      return true;
    }
  }
  return false;
}

}  // namespace

const char* experiment_name(Experiment e) {
  switch (e) {
    case Experiment::cloak_demo: return "cloak-demo";
    case Experiment::delta_sweep: return "delta-sweep";
    case Experiment::resonance_map: return "resonance-map";
    case Experiment::three_spheres: return "three-spheres";
    case Experiment::proof_pipeline: return "proof-pipeline";
    case Experiment::oracle_compare: return "oracle-compare";
  }
  return "?";
}

Config parse(const std::string& text, const std::string& origin) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // nlohmann's message already carries "parse error at line L, column C"
    throw ConfigError(origin + ": " + e.what());
  }
  Ctx c{origin, text};
  if (!j.is_object()) throw ConfigError(origin + ":1: the config must be a JSON object");
  reject_unknown(c, j, "the top level",
                 {"schema", "experiment", "output_dir", "cloak", "source", "deltas", "n_max",
                  "grid", "heatmap", "seed", "trials", "alpha"});

  Config cfg;
  if (!j.contains("schema")) fail(c, "schema", "is required");
  cfg.schema = int_in(c, j, "schema", 1, -1000000, 1000000);
  if (cfg.schema != 1) fail(c, "schema", "must be 1 (the only published schema)");

  std::string kind = need_str(c, j, "experiment");
  if (!experiment_from(kind, cfg.experiment))
    fail(c, "experiment",
         "must be one of cloak-demo, delta-sweep, resonance-map, three-spheres, "
         "proof-pipeline, oracle-compare");

  cfg.output_dir = need_str(c, j, "output_dir");
  if (cfg.output_dir.empty()) fail(c, "output_dir", "must not be empty");

  const bool wants_sweep = cfg.experiment != Experiment::three_spheres;

  if (j.contains("deltas")) {
    const json& jd = j.at("deltas");
    if (!jd.is_array() || jd.empty()) fail(c, "deltas", "must be a non-empty array");
    for (const json& v : jd) {
      if (!v.is_number()) fail(c, "deltas", "must hold numbers only");
      double d = v.get<double>();
      if (!(d > 0.0) || !std::isfinite(d))
        fail(c, "deltas", "must be strictly positive and finite");
      cfg.deltas.push_back(d);
    }
    for (size_t i = 1; i < cfg.deltas.size(); ++i)
      if (!(cfg.deltas[i] < cfg.deltas[i - 1]))
        fail(c, "deltas", "must be sorted strictly descending");
  } else if (wants_sweep) {
    fail(c, "deltas", "is required");
  }
  if (wants_sweep &&
      (cfg.experiment == Experiment::resonance_map ||
       cfg.experiment == Experiment::proof_pipeline) &&
      cfg.deltas.size() < 2)
    fail(c, "deltas", std::string("needs at least two entries for ") + kind);

  const json& jc = need(c, j, "cloak");
  if (!jc.is_object()) fail(c, "cloak", "must be an object");
  reject_unknown(c, jc, "cloak", {"dim", "r2", "r3", "outer_radius", "lambda", "pieces"});
  cfg.cloak.dim = int(need_int(c, jc, "dim"));
  if (cfg.cloak.dim != 2 && cfg.cloak.dim != 3) fail(c, "dim", "must be 2 or 3");
  cfg.cloak.r2 = need_num(c, jc, "r2");
  cfg.cloak.r3 = need_num(c, jc, "r3");
  cfg.cloak.outer_radius = need_num(c, jc, "outer_radius");
  cfg.cloak.lambda = opt_num(c, jc, "lambda", 4.0);
  cfg.cloak.pieces.clear();
  if (jc.contains("pieces")) {
    const json& jp = jc.at("pieces");
    if (!jp.is_array()) fail(c, "pieces", "must be an array");
    for (const json& e : jp) {
      if (!e.is_object()) fail(c, "pieces", "entries must be objects");
      reject_unknown(c, e, "a pieces entry", {"r_in", "r_out", "beta"});
      media::RadialPiece p;
      p.r_in = need_num(c, e, "r_in");
      p.r_out = need_num(c, e, "r_out");
      p.beta = need_num(c, e, "beta");
      cfg.cloak.pieces.push_back(p);
    }
  }
  // three-spheres only borrows the geometry; any positive loss validates it
  cfg.cloak.delta = cfg.deltas.empty() ? 1e-3 : cfg.deltas.front();
  try {
    cfg.cloak.validate();
  } catch (const std::exception& e) {
    fail(c, "cloak", std::string("does not describe a valid device: ") + e.what());
  }

  cfg.n_max = int_in(c, j, "n_max", 16, 0, 64);

  if (j.contains("source")) {
    const json& js = j.at("source");
    if (!js.is_object()) fail(c, "source", "must be an object");
    reject_unknown(c, js, "source", {"radius", "weights"});
    cfg.source.radius = need_num(c, js, "radius");
    if (cfg.experiment == Experiment::resonance_map) {
      // the resonance probe may sit inside the cloaked annulus, where the
      // shell's transient response is excited; the shell itself stays off
      // limits
      if (!(cfg.source.radius > cfg.cloak.r2 && cfg.source.radius < cfg.cloak.outer_radius))
        fail(c, "radius", "must lie strictly between r2 and outer_radius for resonance-map");
    } else if (!cfg.cloak.allows_source_radius(cfg.source.radius)) {
      fail(c, "radius", "must lie strictly between r3 and outer_radius");
    }
    const json& jw = need(c, js, "weights");
    if (!jw.is_array() || jw.empty()) fail(c, "weights", "must be a non-empty array");
    for (const json& e : jw) {
      if (!e.is_object()) fail(c, "weights", "entries must be objects");
      reject_unknown(c, e, "a weights entry", {"n", "k", "re", "im"});
      spectral::ModeIndex m;
      m.n = int(need_int(c, e, "n"));
      m.k = int(opt_int(c, e, "k", 1));
      if (m.n < 0) fail(c, "n", "must be non-negative");
      if (m.n > cfg.n_max) fail(c, "weights", "carry modes above n_max");
      if (cfg.cloak.dim == 2) {
        if (m.n == 0 ? m.k != 1 : (m.k != 1 && m.k != -1))
          fail(c, "k", "must be +1 or -1 in 2D (+1 only for n = 0)");
      } else if (std::abs(m.k) > m.n) {
        fail(c, "k", "must satisfy |k| <= n in 3D");
      }
      complexd w(need_num(c, e, "re"), opt_num(c, e, "im", 0.0));
      cfg.source.weights.emplace_back(m, w);
    }
  } else if (wants_sweep) {
    fail(c, "source", "is required");
  }

  if (j.contains("grid")) {
    const json& jg = j.at("grid");
    if (!jg.is_object()) fail(c, "grid", "must be an object");
    reject_unknown(c, jg, "grid", {"n_r", "n_theta"});
    cfg.grid.n_r = int_in(c, jg, "n_r", 128, 4, 4096);
    cfg.grid.n_theta = int_in(c, jg, "n_theta", 64, 4, 4096);
    if (cfg.grid.n_theta % 2 != 0) fail(c, "n_theta", "must be even");
  }

  if (j.contains("heatmap")) {
    const json& jh = j.at("heatmap");
    if (!jh.is_object()) fail(c, "heatmap", "must be an object");
    reject_unknown(c, jh, "heatmap", {"pixels", "scale"});
    cfg.heatmap.pixels = int_in(c, jh, "pixels", 128, 8, 2048);
    std::string scale = jh.contains("scale") ? need_str(c, jh, "scale") : "log";
    if (scale == "log")
      cfg.heatmap.log_scale = true;
    else if (scale == "linear")
      cfg.heatmap.log_scale = false;
    else
      fail(c, "scale", "must be \"linear\" or \"log\"");
  }

  cfg.seed = unsigned(int_in(c, j, "seed", 7, 0, 1000000000));
  cfg.trials = int_in(c, j, "trials", 32, 1, 100000);
  cfg.alpha = opt_num(c, j, "alpha", 2.0 / 3.0);
  if (!(cfg.alpha > 0.0) || !(cfg.alpha < 1.0)) fail(c, "alpha", "must lie in (0, 1)");

  if (cfg.experiment == Experiment::three_spheres ||
      cfg.experiment == Experiment::proof_pipeline) {
    // the sphere triple (r2/2, 2 r2, r3/2) and the comparison-field patch
    // radii both need room between 4 r2 and r3
    if (!(cfg.cloak.r3 > 4.0 * cfg.cloak.r2))
      fail(c, "r3", std::string("must exceed 4 * r2 for ") + kind);
  }
  if (cfg.experiment == Experiment::oracle_compare && cfg.cloak.dim != 2)
    fail(c, "dim", "must be 2 for oracle-compare (the grid solver is planar)");

  cfg.canonical = j.dump();
  cfg.hash = fnv1a(cfg.canonical);
  return cfg;
}

Config load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path + ": cannot read the config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse(buf.str(), path);
}

std::string schema_text() {
  return R"({
  "schema": 1,
  "experiment": "cloak-demo",
  "output_dir": "out/cloak-demo",
  "cloak": {
    "dim": 2,
    "r2": 1.0,
    "r3": 8.0,
    "outer_radius": 12.0,
    "lambda": 4.0,
    "pieces": [ { "r_in": 1.0, "r_out": 2.0, "beta": 2.0 } ]
  },
  "source": {
    "radius": 10.0,
    "weights": [
      { "n": 1, "k": 1, "re": 1.0, "im": 0.0 },
      { "n": 2, "k": -1, "re": 0.5, "im": -0.25 }
    ]
  },
  "deltas": [ 0.1, 0.01, 0.001 ],
  "n_max": 16,
  "grid": { "n_r": 128, "n_theta": 64 },
  "heatmap": { "pixels": 128, "scale": "log" },
  "seed": 7,
  "trials": 32,
  "alpha": 0.6666666666666666
}
)";
}

}  // namespace cloaksim::config
