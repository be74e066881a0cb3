#pragma once

#include "napl/checkpoint.hpp"
#include "napl/common.hpp"
#include "napl/config.hpp"
#include "napl/encoder.hpp"
#include "napl/inference.hpp"
#include "napl/matching.hpp"
#include "napl/matching_loss.hpp"
#include "napl/nn.hpp"
#include "napl/ops.hpp"
#include "napl/optim.hpp"
#include "napl/point_cloud.hpp"
#include "napl/proto_decoder.hpp"
#include "napl/random.hpp"
#include "napl/synthetic.hpp"
#include "napl/tensor.hpp"
#include "napl/trainer.hpp"
#include "napl/voxel.hpp"
