// Copyright 2026 the fusiondet authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef FUSIONDET_BOX3D_HPP_
#define FUSIONDET_BOX3D_HPP_

#include <cmath>

namespace fusiondet
{

/// Wraps an angle into (-pi, pi].
inline double wrap_angle(double a)
{
  const double two_pi = 2.0 * M_PI;
  a = std::fmod(a, two_pi);
  if (a <= -M_PI) a += two_pi;
  if (a > M_PI) a -= two_pi;
  return a;
}

/// 7-DoF oriented box in the LiDAR frame: center, metric dimensions, yaw
/// about +z. Sizes must stay strictly positive; yaw stays wrapped.
struct Box3D
{
  double x = 0, y = 0, z = 0;  // center, meters
  double l = 1, w = 1, h = 1;  // length (along heading), width, height
  double yaw = 0;              // radians in (-pi, pi]

  Box3D() = default;
  Box3D(double x_, double y_, double z_, double l_, double w_, double h_, double yaw_)
  : x(x_), y(y_), z(z_), l(l_), w(w_), h(h_), yaw(wrap_angle(yaw_))
  {
  }

  bool valid_sizes() const { return l > 0 && w > 0 && h > 0; }
};

struct Detection
{
  Box3D box;
  double score = 0;
};

}  // namespace fusiondet

#endif  // FUSIONDET_BOX3D_HPP_
