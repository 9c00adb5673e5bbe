#pragma once

#include <string>

#include "sgvae/scene.hpp"

namespace sgvae {

struct RenderOptions {
  double pixels_per_meter = 60.0;
  double margin = 20.0;  // pixels
  bool labels = true;
};

// Orthographic top view as SVG 1.1: the room outline and one rotated,
// labelled rectangle per object (+y points up on the page).
std::string render_svg(const Scene& scene, const RenderOptions& options = {});

}  // namespace sgvae
