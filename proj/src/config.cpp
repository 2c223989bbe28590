#include "fusedet/harness/config.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>
#include <vector>

#include "fusedet/core/error.hpp"
#include "fusedet/core/rng.hpp"

namespace fusedet::harness {

namespace {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::string strip(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

}  // namespace

ExperimentConfig ExperimentConfig::desk() { return {}; }

ExperimentConfig ExperimentConfig::paper() {
  ExperimentConfig c;
  c.preset = "paper";
  c.image_size = 640;
  c.widths = {64, 128, 256, 512};
  c.radar_ch = 64;
  c.fuse_ch = 128;
  c.mseii_width = 64;
  c.enc_ch = 240;  // divisible by K=3 and by 8 heads
  c.heads = 8;
  c.num_queries = 60;
  c.epochs = 150;
  return c;
}

ExperimentConfig ExperimentConfig::from_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "paper") return paper();
  throw ConfigError("unknown preset: " + name);
}

std::string ExperimentConfig::canonical() const {
  // std::map keeps keys sorted, which canonicalizes the text form.
  std::map<std::string, std::string> kv;
  kv["afif"] = afif ? "on" : "off";
  kv["mseii"] = mseii ? "on" : "off";
  kv["hifa"] = hifa ? "on" : "off";
  kv["smp"] = smp_backbone ? "on" : "off";
  kv["preset"] = preset;
  kv["image_size"] = std::to_string(image_size);
  kv["widths"] = std::to_string(widths[0]) + "," + std::to_string(widths[1]) + "," +
                 std::to_string(widths[2]) + "," + std::to_string(widths[3]);
  kv["radar_ch"] = std::to_string(radar_ch);
  kv["radar_blocks"] = std::to_string(radar_blocks);
  kv["smp_points"] = std::to_string(smp_points);
  kv["fuse_ch"] = std::to_string(fuse_ch);
  kv["mseii_width"] = std::to_string(mseii_width);
  kv["enc_ch"] = std::to_string(enc_ch);
  kv["hifa_chunks"] = std::to_string(hifa_chunks);
  kv["fse_input"] = fse_input;
  kv["encoder_attention"] = encoder_attention;
  kv["heads"] = std::to_string(heads);
  kv["num_queries"] = std::to_string(num_queries);
  kv["num_classes"] = std::to_string(num_classes);
  kv["decoder_layers"] = std::to_string(decoder_layers);
  kv["revp_normalize"] = revp_normalize ? "on" : "off";
  kv["lr"] = fmt_double(lr);
  kv["weight_decay"] = fmt_double(weight_decay);
  kv["grad_clip"] = fmt_double(grad_clip);
  kv["epochs"] = std::to_string(epochs);
  kv["batch_size"] = std::to_string(batch_size);
  kv["seed"] = std::to_string(seed);
  kv["w_cls"] = fmt_double(w_cls);
  kv["w_l1"] = fmt_double(w_l1);
  kv["w_giou"] = fmt_double(w_giou);
  kv["w_qual"] = fmt_double(w_qual);
  kv["enc_loss_weight"] = fmt_double(enc_loss_weight);
  kv["iou_aware_cls"] = iou_aware_cls ? "on" : "off";
  kv["aux_losses"] = aux_losses ? "on" : "off";
  kv["n_train"] = std::to_string(n_train);
  kv["n_val"] = std::to_string(n_val);
  kv["n_test"] = std::to_string(n_test);
  kv["score_threshold"] = fmt_double(score_threshold);
  kv["max_detections"] = std::to_string(max_detections);
  std::ostringstream os;
  for (const auto& [k, v] : kv) os << k << " = " << v << "\n";
  return os.str();
}

std::string ExperimentConfig::hash8() const {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(fnv1a(canonical())));
  return std::string(buf).substr(0, 12);
}

void ExperimentConfig::validate() const {
  check_config(enc_ch % hifa_chunks == 0,
               "enc_ch=" + std::to_string(enc_ch) + " not divisible by hifa_chunks=" +
                   std::to_string(hifa_chunks));
  check_config(enc_ch % heads == 0, "enc_ch not divisible by heads");
  check_config(enc_ch % 4 == 0, "enc_ch must be divisible by 4 (sincos embedding)");
  check_config(image_size % 32 == 0, "image_size must be divisible by 32 (P5 stride)");
  check_config(epochs >= 1, "epochs must be >= 1");
  check_config(batch_size >= 1, "batch_size must be >= 1");
  check_config(num_classes >= 1, "num_classes must be >= 1");
  check_config(radar_ch % 2 == 0 && widths[0] % 2 == 0, "channel widths must be even (stems halve them)");
  check_config(fse_input == "fused" || fse_input == "raw_radar", "fse_input must be fused|raw_radar");
  check_config(encoder_attention == "off" || encoder_attention == "top_level",
               "encoder_attention must be off|top_level");
}

synth::SynthConfig ExperimentConfig::synth_config() const {
  synth::SynthConfig s;
  s.image_size = image_size;
  s.num_classes = static_cast<int>(num_classes);
  s.seed = seed;
  return s;
}

void ExperimentConfig::apply(const std::string& key, const std::string& value) {
  auto on = [&] {
    if (value == "on" || value == "true" || value == "1") return true;
    if (value == "off" || value == "false" || value == "0") return false;
    throw ConfigError("bad boolean for " + key + ": " + value);
  };
  if (key == "afif") afif = on();
  else if (key == "mseii") mseii = on();
  else if (key == "hifa") hifa = on();
  else if (key == "smp") smp_backbone = on();
  else if (key == "preset") preset = value;
  else if (key == "image_size") image_size = std::stoll(value);
  else if (key == "widths") {
    std::istringstream is(value);
    std::string tok;
    for (auto& w : widths) {
      std::getline(is, tok, ',');
      w = std::stoll(tok);
    }
  } else if (key == "radar_ch") radar_ch = std::stoll(value);
  else if (key == "radar_blocks") radar_blocks = std::stoll(value);
  else if (key == "smp_points") smp_points = std::stoll(value);
  else if (key == "fuse_ch") fuse_ch = std::stoll(value);
  else if (key == "mseii_width") mseii_width = std::stoll(value);
  else if (key == "enc_ch") enc_ch = std::stoll(value);
  else if (key == "hifa_chunks") hifa_chunks = std::stoll(value);
  else if (key == "fse_input") fse_input = value;
  else if (key == "encoder_attention") encoder_attention = value;
  else if (key == "heads") heads = std::stoll(value);
  else if (key == "num_queries") num_queries = std::stoll(value);
  else if (key == "num_classes") num_classes = std::stoll(value);
  else if (key == "decoder_layers") decoder_layers = std::stoll(value);
  else if (key == "revp_normalize") revp_normalize = on();
  else if (key == "lr") lr = std::stod(value);
  else if (key == "weight_decay") weight_decay = std::stod(value);
  else if (key == "grad_clip") grad_clip = std::stod(value);
  else if (key == "epochs") epochs = std::stoll(value);
  else if (key == "batch_size") batch_size = std::stoll(value);
  else if (key == "seed") seed = std::stoull(value);
  else if (key == "w_cls") w_cls = std::stod(value);
  else if (key == "w_l1") w_l1 = std::stod(value);
  else if (key == "w_giou") w_giou = std::stod(value);
  else if (key == "w_qual") w_qual = std::stod(value);
  else if (key == "enc_loss_weight") enc_loss_weight = std::stod(value);
  else if (key == "iou_aware_cls") iou_aware_cls = on();
  else if (key == "aux_losses") aux_losses = on();
  else if (key == "n_train") n_train = std::stoll(value);
  else if (key == "n_val") n_val = std::stoll(value);
  else if (key == "n_test") n_test = std::stoll(value);
  else if (key == "score_threshold") score_threshold = std::stod(value);
  else if (key == "max_detections") max_detections = std::stoll(value);
  else throw ConfigError("unknown config key: " + key);
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config: " + path);
  // A preset line, if present, must be applied first so later keys override.
  std::vector<std::pair<std::string, std::string>> kvs;
  std::string line;
  while (std::getline(f, line)) {
    line = strip(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    check(eq != std::string::npos, "bad config line: " + line);
    kvs.emplace_back(strip(line.substr(0, eq)), strip(line.substr(eq + 1)));
  }
  ExperimentConfig cfg;
  for (const auto& [k, v] : kvs)
    if (k == "preset") cfg = from_preset(v);
  for (const auto& [k, v] : kvs) cfg.apply(k, v);
  cfg.validate();
  return cfg;
}

void ExperimentConfig::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw IoError("cannot write config: " + path);
  f << canonical();
}

}  // namespace fusedet::harness
