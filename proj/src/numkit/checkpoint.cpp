#include "belieflab/numkit/checkpoint.hpp"

#include <json.hpp>

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace belieflab::numkit {

using nlohmann::json;

std::string serialize_parameters(const ParameterSet& params) {
  json doc;
  doc["format"] = "belieflab-parameters";
  doc["version"] = kCheckpointVersion;
  json list = json::array();
  for (ParamId id = 0; id < params.size(); ++id) {
    const Tensor& t = params.value(id);
    json entry;
    entry["name"] = params.name(id);
    entry["shape"] = {t.rows(), t.cols()};
    entry["values"] = std::vector<double>(t.data(), t.data() + t.size());
    list.push_back(std::move(entry));
  }
  doc["parameters"] = std::move(list);
  return doc.dump();
}

ParameterSet deserialize_parameters(const std::string& text) {
  const json doc = json::parse(text);
  if (doc.value("format", "") != "belieflab-parameters") throw std::runtime_error("checkpoint: unknown format");
  if (!doc.contains("version")) throw std::runtime_error("checkpoint: missing version");
  if (doc["version"].get<int>() != kCheckpointVersion) {
    throw std::runtime_error("checkpoint: unsupported version " + doc["version"].dump());
  }
  ParameterSet params;
  for (const json& entry : doc.at("parameters")) {
    const auto shape = entry.at("shape").get<std::vector<Eigen::Index>>();
    const auto values = entry.at("values").get<std::vector<double>>();
    if (shape.size() != 2 || shape[0] * shape[1] != static_cast<Eigen::Index>(values.size())) {
      throw std::runtime_error("checkpoint: value count does not match shape for " + entry.at("name").get<std::string>());
    }
    Tensor t(shape[0], shape[1]);
    std::copy(values.begin(), values.end(), t.data());
    params.add(entry.at("name").get<std::string>(), std::move(t));
  }
  return params;
}

void save_parameters(const ParameterSet& params, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << serialize_parameters(params) << '\n';
}

ParameterSet load_parameters(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return deserialize_parameters(buf.str());
}

void assign_parameters(ParameterSet& target, const ParameterSet& source) {
  for (ParamId id = 0; id < target.size(); ++id) {
    const Tensor& src = source.value(source.id(target.name(id)));
    Tensor& dst = target.value(id);
    if (src.rows() != dst.rows() || src.cols() != dst.cols()) {
      throw ShapeError("assign_parameters: shape mismatch for " + target.name(id));
    }
    dst = src;
  }
}

}  // namespace belieflab::numkit
