#pragma once

#include <Eigen/Dense>

namespace mpp {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

}  // namespace mpp
