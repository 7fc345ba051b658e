#pragma once

#include <Eigen/Dense>

namespace mscal {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

}  // namespace mscal
