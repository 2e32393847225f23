#include "flexireg/config.hpp"

#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "flexireg/rng.hpp"

namespace flexireg {
namespace {

struct Field {
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
T parse_value(const std::string& s);

template <>
std::string parse_value<std::string>(const std::string& s) { return s; }
template <>
double parse_value<double>(const std::string& s) {
  std::size_t pos = 0;
  double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad numeric value: " + s);
  return v;
}
template <>
int parse_value<int>(const std::string& s) {
  std::size_t pos = 0;
  int v = std::stoi(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad integer value: " + s);
  return v;
}
template <>
std::uint64_t parse_value<std::uint64_t>(const std::string& s) {
  std::size_t pos = 0;
  auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("bad integer value: " + s);
  return v;
}

template <typename T>
std::string to_str(const T& v) {
  if constexpr (std::is_same_v<T, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<T, double>) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  } else {
    return std::to_string(v);
  }
}

const std::map<std::string, Field>& fields() {
#define FIELD(name)                                                    \
  {#name,                                                              \
   {[](const RunConfig& c) { return to_str(c.name); },                 \
    [](RunConfig& c, const std::string& s) {                           \
      c.name = parse_value<decltype(c.name)>(s);                       \
    }}}
  static const std::map<std::string, Field> table = {
      FIELD(data_dir), FIELD(out_dir), FIELD(edge_length), FIELD(grid_shape),
      FIELD(d), FIELD(d_text), FIELD(d_proj), FIELD(heads), FIELD(gat_layers),
      FIELD(fusion_layers), FIELD(sv_dim), FIELD(text_dim), FIELD(sat_dim),
      FIELD(seed), FIELD(cell_epochs), FIELD(cell_lr), FIELD(prompt_epochs),
      FIELD(prompt_lr), FIELD(prompt_weight_decay), FIELD(sv_epochs),
      FIELD(sv_lr), FIELD(margin), FIELD(tau), FIELD(smooth_l1_beta),
      FIELD(dropout), FIELD(region_images), FIELD(provider), FIELD(endpoint),
      FIELD(stub_signal), FIELD(ridge_lambda), FIELD(folds), FIELD(variant),
      FIELD(synth_extent), FIELD(synth_regions), FIELD(synth_noise),
  };
#undef FIELD
  return table;
}

}  // namespace

std::string RunConfig::get(const std::string& key) const {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("unknown config key: " + key);
  return it->second.get(*this);
}

void RunConfig::set(const std::string& key, const std::string& value) {
  auto it = fields().find(key);
  if (it == fields().end()) throw std::invalid_argument("unknown config key: " + key);
  it->second.set(*this, value);
}

std::map<std::string, std::string> RunConfig::to_map() const {
  std::map<std::string, std::string> m;
  for (const auto& [k, f] : fields()) m[k] = f.get(*this);
  return m;
}

std::uint64_t RunConfig::config_hash() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& [k, v] : to_map()) {
    h = fnv1a64(k.data(), k.size(), h);
    h = fnv1a64("=", 1, h);
    h = fnv1a64(v.data(), v.size(), h);
    h = fnv1a64("\n", 1, h);
  }
  return h;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      auto a = s.find_first_not_of(" \t\r");
      auto b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

void save_config_file(const RunConfig& cfg, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write config file: " + path);
  for (const auto& [k, v] : cfg.to_map()) out << k << " = " << v << "\n";
}

}  // namespace flexireg
