#include <fstream>
#include <sstream>

#include <json.hpp>

#include "see/errors.hpp"
#include "see/model.hpp"

namespace see {

namespace {

using nlohmann::json;

constexpr int kModelFormatVersion = 1;

json spec_to_json(const ArchitectureSpec& s) {
  json trunk = json::array();
  for (const auto& st : s.trunk) {
    trunk.push_back({{"out_channels", st.out_channels},
                     {"kernel_width", st.kernel_width},
                     {"stride", st.stride},
                     {"pool_width", st.pool_width},
                     {"pool_stride", st.pool_stride}});
  }
  json exits = json::array();
  for (const auto& e : s.early_exits) {
    exits.push_back({{"attach_after_layer", e.attach_after_layer},
                     {"data_fraction", e.data_fraction},
                     {"entropy_threshold", e.entropy_threshold},
                     {"loss_weight", e.loss_weight}});
  }
  return {{"channels", s.channels},
          {"segment_length", s.segment_length},
          {"num_classes", s.num_classes},
          {"trunk", trunk},
          {"fc_hidden", s.fc_hidden},
          {"head",
           {{"filters", s.head.filters},
            {"kernel_width", s.head.kernel_width},
            {"pool_width", s.head.pool_width},
            {"pool_stride", s.head.pool_stride},
            {"hidden", s.head.hidden}}},
          {"late_kernel_width", s.late_kernel_width},
          {"early_exits", exits},
          {"terminal_loss_weight", s.terminal_loss_weight}};
}

ArchitectureSpec spec_from_json(const json& j) {
  ArchitectureSpec s;
  s.channels = j.at("channels").get<int>();
  s.segment_length = j.at("segment_length").get<int>();
  s.num_classes = j.at("num_classes").get<int>();
  s.trunk.clear();
  for (const auto& st : j.at("trunk")) {
    s.trunk.push_back({st.at("out_channels").get<int>(), st.at("kernel_width").get<int>(),
                       st.at("stride").get<int>(), st.at("pool_width").get<int>(),
                       st.at("pool_stride").get<int>()});
  }
  s.fc_hidden = j.at("fc_hidden").get<int>();
  const auto& h = j.at("head");
  s.head = {h.at("filters").get<int>(), h.at("kernel_width").get<int>(),
            h.at("pool_width").get<int>(), h.at("pool_stride").get<int>(),
            h.at("hidden").get<int>()};
  s.late_kernel_width = j.at("late_kernel_width").get<int>();
  for (const auto& e : j.at("early_exits")) {
    s.early_exits.push_back({e.at("attach_after_layer").get<int>(),
                             e.at("data_fraction").get<double>(),
                             e.at("entropy_threshold").get<double>(),
                             e.at("loss_weight").get<double>()});
  }
  s.terminal_loss_weight = j.at("terminal_loss_weight").get<double>();
  return s;
}

}  // namespace

std::string SeeCnnModel::to_text() const {
  json j;
  j["format"] = "see-cnn";
  j["version"] = kModelFormatVersion;
  j["spec"] = spec_to_json(spec_);
  j["normalizer"] = {{"mean", normalizer.mean}, {"scale", normalizer.scale}};
  j["parameter_count"] = params_.size();
  j["parameters"] = params_;
  return j.dump(1) + "\n";
}

SeeCnnModel SeeCnnModel::from_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("model file is not valid JSON: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != "see-cnn") throw ParseError("not a see-cnn model file");
    const int version = j.at("version").get<int>();
    if (version != kModelFormatVersion) {
      throw ParseError("unsupported model format version " + std::to_string(version));
    }
    SeeCnnModel model(spec_from_json(j.at("spec")));
    auto params = j.at("parameters").get<std::vector<double>>();
    if (params.size() != model.params_.size()) {
      throw ParseError("model file holds " + std::to_string(params.size()) +
                       " parameters, architecture needs " + std::to_string(model.params_.size()));
    }
    model.params_ = std::move(params);
    const auto& n = j.at("normalizer");
    model.normalizer.mean = n.at("mean").get<std::vector<double>>();
    model.normalizer.scale = n.at("scale").get<std::vector<double>>();
    return model;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed model file: ") + e.what());
  }
}

void SeeCnnModel::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write model file " + path.string());
  out << to_text();
  if (!out) throw IoError("failed writing model file " + path.string());
}

SeeCnnModel SeeCnnModel::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file " + path.string());
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return from_text(buffer.str());
}

}  // namespace see
