// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dvs2sm/io_util.hpp"
#include "dvs2sm/nullhop_core.hpp"

namespace dvs2sm {

// Network description is a JSON document; the bulk weights live in a binary
// sidecar ("WGT1", u32 value count, then i32 little-endian Q16.8 raws) whose
// path is stored relative to the JSON file. Sidecar order: each conv layer's
// weights in layer order, then the fc weight matrix row-major.

inline void write_weight_blob(std::ostream& os, const std::vector<int32_t>& raws) {
  io::put_magic(os, "WGT1");
  io::put_u32(os, static_cast<uint32_t>(raws.size()));
  for (int32_t v : raws) {
    io::put_i32(os, v);
  }
}

inline std::vector<int32_t> read_weight_blob(std::istream& is) {
  io::expect_magic(is, "WGT1");
  uint32_t count = io::get_u32(is);
  std::vector<int32_t> raws(count);
  for (int32_t& v : raws) {
    v = io::get_i32(is);
  }
  return raws;
}

inline void save_network(const NetworkConfig& net, const std::filesystem::path& json_path,
                         const std::string& weights_filename) {
  net.validate();
  nlohmann::json doc;
  doc["name"] = net.name;
  doc["input"] = {{"height", net.input_height},
                  {"width", net.input_width},
                  {"channels", net.input_channels}};
  doc["layers"] = nlohmann::json::array();
  std::vector<int32_t> blob;
  for (const ConvLayerConfig& layer : net.layers) {
    nlohmann::json l = {{"kernel", layer.kernel},
                        {"in_channels", layer.in_channels},
                        {"out_channels", layer.out_channels},
                        {"padding", layer.padding},
                        {"relu", layer.relu_enabled},
                        {"pool", layer.pool_enabled}};
    if (!layer.bias.empty()) {
      l["bias_raw"] = layer.bias;
    }
    doc["layers"].push_back(std::move(l));
    blob.insert(blob.end(), layer.weights.begin(), layer.weights.end());
  }
  doc["fc"] = {{"inputs", net.fc.inputs},
               {"outputs", net.fc.outputs},
               {"labels", net.fc.labels}};
  if (!net.fc.bias.empty()) {
    doc["fc"]["bias_raw"] = net.fc.bias;
  }
  doc["weights"] = weights_filename;
  blob.insert(blob.end(), net.fc.weights.begin(), net.fc.weights.end());

  std::ofstream wgt(json_path.parent_path() / weights_filename, std::ios::binary);
  if (!wgt) {
    throw IoError("cannot open weight sidecar for writing");
  }
  write_weight_blob(wgt, blob);

  std::ofstream js(json_path);
  if (!js) {
    throw IoError("cannot open " + json_path.string() + " for writing");
  }
  js << doc.dump(2) << '\n';
}

inline NetworkConfig load_network(const std::filesystem::path& json_path) {
  std::ifstream js(json_path);
  if (!js) {
    throw IoError("cannot open " + json_path.string());
  }
  nlohmann::json doc;
  try {
    js >> doc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad network file " + json_path.string() + ": " + e.what());
  }

  NetworkConfig net;
  try {
    net.name = doc.value("name", std::string{});
    net.input_height = doc.at("input").at("height").get<uint16_t>();
    net.input_width = doc.at("input").at("width").get<uint16_t>();
    net.input_channels = doc.at("input").at("channels").get<uint16_t>();
    for (const auto& l : doc.at("layers")) {
      ConvLayerConfig layer;
      layer.kernel = l.at("kernel").get<uint8_t>();
      layer.in_channels = l.at("in_channels").get<uint16_t>();
      layer.out_channels = l.at("out_channels").get<uint16_t>();
      layer.padding = l.contains("padding")
                          ? l.at("padding").get<uint8_t>()
                          : ConvLayerConfig::same_padding(layer.kernel);
      layer.relu_enabled = l.value("relu", true);
      layer.pool_enabled = l.value("pool", false);
      if (l.contains("bias_raw")) {
        layer.bias = l.at("bias_raw").get<std::vector<int32_t>>();
      }
      net.layers.push_back(std::move(layer));
    }
    net.fc.inputs = doc.at("fc").at("inputs").get<uint32_t>();
    net.fc.outputs = doc.at("fc").at("outputs").get<uint32_t>();
    net.fc.labels = doc.at("fc").at("labels").get<std::vector<std::string>>();
    if (doc.at("fc").contains("bias_raw")) {
      net.fc.bias = doc.at("fc").at("bias_raw").get<std::vector<int32_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("bad network file " + json_path.string() + ": " + e.what());
  }

  std::filesystem::path wgt_path =
      json_path.parent_path() / doc.at("weights").get<std::string>();
  std::ifstream wgt(wgt_path, std::ios::binary);
  if (!wgt) {
    throw IoError("cannot open weight sidecar " + wgt_path.string());
  }
  std::vector<int32_t> blob = read_weight_blob(wgt);

  size_t offset = 0;
  auto take = [&](size_t n) {
    if (offset + n > blob.size()) {
      throw ConfigError("weight sidecar too short");
    }
    std::vector<int32_t> part(blob.begin() + offset, blob.begin() + offset + n);
    offset += n;
    return part;
  };
  for (ConvLayerConfig& layer : net.layers) {
    layer.weights = take(layer.weight_count());
  }
  net.fc.weights = take(static_cast<size_t>(net.fc.inputs) * net.fc.outputs);
  if (offset != blob.size()) {
    throw ConfigError("weight sidecar has " + std::to_string(blob.size() - offset) +
                      " trailing values");
  }
  net.validate();
  return net;
}

}  // namespace dvs2sm
