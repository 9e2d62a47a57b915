#include "firefly/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <json.hpp>

namespace firefly::net {

using nlohmann::json;

namespace {

json neurons_to_json(const std::vector<Neuron>& ns) {
  json arr = json::array();
  for (const Neuron& n : ns) arr.push_back({{"theta", n.theta}, {"out_weight", n.out_weight}});
  return arr;
}

std::vector<Neuron> neurons_from_json(const json& arr) {
  std::vector<Neuron> ns;
  for (const json& j : arr) {
    Neuron n;
    n.theta = j.at("theta").get<std::vector<double>>();
    n.out_weight = j.at("out_weight").get<std::vector<double>>();
    ns.push_back(std::move(n));
  }
  return ns;
}

}  // namespace

std::string to_json(const GrowableNetwork& net) {
  json doc;
  doc["schema_version"] = kCheckpointSchemaVersion;
  doc["head_kind"] = to_string(net.head);
  json layers = json::array();
  for (const Layer& l : net.layers) {
    layers.push_back({{"activation", to_string(l.activation)},
                      {"input_dim", l.input_dim},
                      {"output_dim", l.output_dim},
                      {"neurons", neurons_to_json(l.neurons)}});
  }
  doc["layers"] = std::move(layers);
  json blocks = json::array();
  for (const ResidualBlock& b : net.residual_blocks)
    blocks.push_back({{"slot", b.slot}, {"neurons", neurons_to_json(b.neurons)}});
  doc["residual_blocks"] = std::move(blocks);
  return doc.dump();
}

GrowableNetwork from_json(const std::string& text) {
  GrowableNetwork net;
  try {
    const json doc = json::parse(text);
    if (doc.at("schema_version").get<int>() != kCheckpointSchemaVersion)
      throw StructuralError("unsupported checkpoint schema version");
    net.head = head_from_string(doc.at("head_kind").get<std::string>());
    for (const json& jl : doc.at("layers")) {
      Layer l;
      l.activation = activation_from_string(jl.at("activation").get<std::string>());
      l.input_dim = jl.at("input_dim").get<std::size_t>();
      l.output_dim = jl.at("output_dim").get<std::size_t>();
      l.neurons = neurons_from_json(jl.at("neurons"));
      net.layers.push_back(std::move(l));
    }
    for (const json& jb : doc.at("residual_blocks")) {
      ResidualBlock b;
      b.slot = jb.at("slot").get<std::size_t>();
      b.neurons = neurons_from_json(jb.at("neurons"));
      net.residual_blocks.push_back(std::move(b));
    }
  } catch (const json::exception& e) {
    throw StructuralError(std::string("malformed checkpoint: ") + e.what());
  }
  net.validate();
  return net;
}

void save_checkpoint(const GrowableNetwork& net, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw StructuralError("cannot write checkpoint " + path.string());
  out << to_json(net) << '\n';
}

GrowableNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw StructuralError("cannot read checkpoint " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return from_json(ss.str());
}

}  // namespace firefly::net
