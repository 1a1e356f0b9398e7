#include "voxmim/dataset_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace voxmim {

using nlohmann::json;

namespace {

json spec_to_json(const PhantomSpec& s) {
  return json{{"volume", s.volume},
              {"patch", s.patch},
              {"blobs", s.blobs},
              {"age_range", {s.age_lo, s.age_hi}},
              {"class_amplitude", s.class_amplitude},
              {"contrast_amplitude", s.contrast_amplitude},
              {"jitter_amplitude", s.jitter_amplitude},
              {"noise_sigma", s.noise_sigma},
              {"behavior_weights", s.behavior_weights},
              {"behavior_names", s.behavior_names}};
}

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec s;
  j.at("volume").get_to(s.volume);
  j.at("patch").get_to(s.patch);
  j.at("blobs").get_to(s.blobs);
  s.age_lo = j.at("age_range").at(0).get<double>();
  s.age_hi = j.at("age_range").at(1).get<double>();
  j.at("class_amplitude").get_to(s.class_amplitude);
  j.at("contrast_amplitude").get_to(s.contrast_amplitude);
  j.at("jitter_amplitude").get_to(s.jitter_amplitude);
  j.at("noise_sigma").get_to(s.noise_sigma);
  j.at("behavior_weights").get_to(s.behavior_weights);
  j.at("behavior_names").get_to(s.behavior_names);
  s.validate();
  return s;
}

std::string blob_name(size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "phantom_%05zu.bin", i);
  return buf;
}

}  // namespace

void save_dataset(const std::string& dir, const PhantomSpec& spec,
                  const std::vector<Phantom>& phantoms) {
  std::filesystem::create_directories(dir);
  json index;
  index["spec"] = spec_to_json(spec);
  index["phantoms"] = json::array();
  for (size_t i = 0; i < phantoms.size(); ++i) {
    const Phantom& p = phantoms[i];
    const std::string name = blob_name(i);
    std::ofstream blob(dir + "/" + name, std::ios::binary);
    if (!blob) throw std::runtime_error("save_dataset: cannot write " + dir + "/" + name);
    blob.write(reinterpret_cast<const char*>(p.volume.data()),
               static_cast<std::streamsize>(p.volume.size() * sizeof(float)));
    index["phantoms"].push_back(json{{"file", name},
                                     {"shape", spec.volume},
                                     {"age", p.age},
                                     {"label", p.label},
                                     {"behavior", p.behavior},
                                     {"seed", p.seed},
                                     {"contrast", p.contrast},
                                     {"jitter", p.jitter}});
  }
  std::ofstream out(dir + "/index.json");
  out << index.dump(2) << "\n";
}

LoadedDataset load_dataset(const std::string& dir) {
  std::ifstream in(dir + "/index.json");
  if (!in) throw std::runtime_error("load_dataset: missing " + dir + "/index.json");
  json index = json::parse(in);
  LoadedDataset ds;
  ds.spec = spec_from_json(index.at("spec"));
  const size_t voxels = static_cast<size_t>(ds.spec.volume[0]) * ds.spec.volume[1] *
                        ds.spec.volume[2];
  for (const auto& e : index.at("phantoms")) {
    Phantom p;
    p.age = e.at("age").get<double>();
    p.label = e.at("label").get<int>();
    e.at("behavior").get_to(p.behavior);
    p.seed = e.at("seed").get<uint64_t>();
    p.contrast = e.value("contrast", 0.0);
    p.jitter = e.value("jitter", 0.0);
    const std::string file = dir + "/" + e.at("file").get<std::string>();
    std::ifstream blob(file, std::ios::binary);
    if (!blob) throw std::runtime_error("load_dataset: missing blob " + file);
    p.volume.resize(voxels);
    blob.read(reinterpret_cast<char*>(p.volume.data()),
              static_cast<std::streamsize>(voxels * sizeof(float)));
    if (static_cast<size_t>(blob.gcount()) != voxels * sizeof(float))
      throw std::runtime_error("load_dataset: truncated blob " + file);
    ds.phantoms.push_back(std::move(p));
  }
  return ds;
}

}  // namespace voxmim
