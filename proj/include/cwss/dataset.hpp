#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "cwss/tensor.hpp"

namespace cwss {

struct PatchRecord {
  std::string name;
  Tensor image;               // [3,S,S] in [0,1]
  Tensor labels;              // [27] binary
  std::optional<Tensor> mask; // [S,S] per-pixel class id (Background = 27)
};

// Procedural stand-in corpus: Voronoi regions of per-class textures inside
// a pure-white border. Masks and labels are consistent by construction
// (labels are scanned from the painted mask).
struct SynthConfig {
  int num_classes = 4;       // uses taxonomy classes 0..num_classes-1
  int patches = 600;
  int min_labels = 1;
  int max_labels = 3;
  float border_fraction = 0.12f;  // fraction of pixels in the white border
  int size = 272;
  std::uint64_t seed = 42;
  std::uint64_t salt = 0;    // distinguishes splits drawn from one seed
  std::string prefix = "patch";

  void validate() const;
};

// Texture recipe for one synthetic class; recipes are pairwise separated
// by hue (golden-angle rotation), pattern kind and spatial frequency.
struct TextureRecipe {
  float r, g, b;
  int pattern;      // 0 horizontal, 1 vertical, 2 dots, 3 diagonal
  float frequency;  // cycles per patch
};
TextureRecipe texture_recipe(int cls);

std::vector<PatchRecord> generate_synthetic(const SynthConfig& cfg);

// Layout: <dir>/images/<name>.png, <dir>/labels.csv, <dir>/masks/<name>.png.
// The CSV header is "filename" followed by the 27 taxonomy codes.
void save_dataset(const std::vector<PatchRecord>& records, const std::string& dir);
std::vector<PatchRecord> load_dataset(const std::string& images_dir,
                                      const std::string& labels_csv,
                                      const std::string& masks_dir = "");

}  // namespace cwss
