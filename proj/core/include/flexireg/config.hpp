#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace flexireg {

// Run configuration shared by all pipeline stages. Defaults follow the
// published hyperparameter profile; everything is overridable from a flat
// key=value config file and from CLI flags (flag > file > default).
struct RunConfig {
  // paths
  std::string data_dir = "data";
  std::string out_dir = "out";

  // grid
  double edge_length = 200.0;     // meters
  std::string grid_shape = "hex"; // hex | square

  // model dims
  int d = 144;
  int d_text = 144;
  int d_proj = 256;
  int heads = 4;
  int gat_layers = 2;
  int fusion_layers = 3;
  int sv_dim = 768;
  int text_dim = 4096;
  int sat_dim = 512;

  // training
  std::uint64_t seed = 7;
  int cell_epochs = 2000;
  double cell_lr = 1e-4;
  int prompt_epochs = 1000;
  double prompt_lr = 5e-4;
  double prompt_weight_decay = 5e-4;
  int sv_epochs = 100;
  double sv_lr = 1e-3;
  double margin = 1.0;        // triplet margin M
  double tau = 0.5;           // InfoNCE temperature
  double smooth_l1_beta = 1.0;
  double dropout = 0.1;
  int region_images = 64;     // x, images per region in SV-RAlign

  // providers
  std::string provider = "stub";  // stub | remote
  std::string endpoint = "http://127.0.0.1:8900";
  double stub_signal = 1.0;       // amplitude of the structured component in stub embeddings

  // eval
  double ridge_lambda = 1.0;
  int folds = 10;
  std::string variant = "full";

  // synthetic city
  double synth_extent = 8000.0;   // bbox side, meters
  int synth_regions = 60;
  double synth_noise = 0.05;      // target noise sigma, relative to target stddev

  std::string get(const std::string& key) const;          // stringified value
  void set(const std::string& key, const std::string& value);  // throws on unknown key
  std::map<std::string, std::string> to_map() const;
  std::uint64_t config_hash() const;
};

// Flat key=value file, '#' comments, blank lines ignored.
RunConfig load_config_file(const std::string& path);
void save_config_file(const RunConfig& cfg, const std::string& path);

}  // namespace flexireg
