#include "vocap/serialize.hpp"

#include <sstream>

namespace vocap {

void to_json(nlohmann::json& j, const FeatureSpec& s) {
  j = nlohmann::json{{"kind", to_string(s.kind)},
                     {"window_s", s.window_s},
                     {"hop_s", s.hop_s},
                     {"fft_size", s.fft_size},
                     {"cepstral_count", s.cepstral_count},
                     {"filter_count", s.filter_count},
                     {"preemphasis", s.preemphasis},
                     {"log_floor", s.log_floor},
                     {"spec_fft", s.spec_fft},
                     {"spec_hop", s.spec_hop}};
}

void from_json(const nlohmann::json& j, FeatureSpec& s) {
  s = FeatureSpec::defaults(feature_kind_from_string(j.at("kind")));
  s.window_s = j.value("window_s", s.window_s);
  s.hop_s = j.value("hop_s", s.hop_s);
  s.fft_size = j.value("fft_size", s.fft_size);
  s.cepstral_count = j.value("cepstral_count", s.cepstral_count);
  s.filter_count = j.value("filter_count", s.filter_count);
  s.preemphasis = j.value("preemphasis", s.preemphasis);
  s.log_floor = j.value("log_floor", s.log_floor);
  s.spec_fft = j.value("spec_fft", s.spec_fft);
  s.spec_hop = j.value("spec_hop", s.spec_hop);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"architecture", to_string(c.architecture)},
                     {"frontend", c.frontend},
                     {"layer_widths", c.layer_widths},
                     {"class_count", c.class_count},
                     {"seed", c.seed},
                     {"sample_rate", c.sample_rate}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  c.architecture = architecture_from_string(j.at("architecture"));
  c.frontend = j.at("frontend").get<FeatureSpec>();
  if (j.contains("layer_widths"))
    c.layer_widths = j.at("layer_widths").get<std::vector<int>>();
  c.class_count = j.value("class_count", 2);
  c.seed = j.value("seed", std::uint64_t{1});
  c.sample_rate = j.value("sample_rate", kCanonicalRate);
}

void to_json(nlohmann::json& j, const GmmConfig& c) {
  j = nlohmann::json{{"components", c.components},
                     {"em_iters", c.em_iters},
                     {"kmeans_iters", c.kmeans_iters},
                     {"covariance_floor", c.covariance_floor},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, GmmConfig& c) {
  c = GmmConfig{};
  c.components = j.value("components", c.components);
  c.em_iters = j.value("em_iters", c.em_iters);
  c.kmeans_iters = j.value("kmeans_iters", c.kmeans_iters);
  c.covariance_floor = j.value("covariance_floor", c.covariance_floor);
  c.seed = j.value("seed", c.seed);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"epochs", c.epochs},
                     {"batch_size", c.batch_size},
                     {"learning_rate", c.learning_rate},
                     {"loss", to_string(c.loss)},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c = TrainConfig{};
  c.epochs = j.value("epochs", c.epochs);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  if (j.contains("loss")) c.loss = loss_kind_from_string(j.at("loss"));
  c.seed = j.value("seed", c.seed);
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

}  // namespace vocap
