#pragma once

#include <functional>

#include "meshdens/meshing.hpp"

namespace meshdens {

/// Triangle size callback: the longest-edge bound at a point.
using TriSizeFn = std::function<double(Vec2)>;

TriangleMesh triangulate_with(const DomainSpec& domain, const TriSizeFn& size, const MeshingOptions& opts);

}  // namespace meshdens
