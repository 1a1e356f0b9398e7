#pragma once

#include <string>
#include <vector>

#include "voxmim/phantom.hpp"

namespace voxmim {

// One little-endian f32 blob per phantom plus index.json carrying shape, age,
// label, behavior scores and seed.
void save_dataset(const std::string& dir, const PhantomSpec& spec,
                  const std::vector<Phantom>& phantoms);

struct LoadedDataset {
  PhantomSpec spec;
  std::vector<Phantom> phantoms;
};
LoadedDataset load_dataset(const std::string& dir);

}  // namespace voxmim
