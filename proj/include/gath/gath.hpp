#pragma once

#include "gath/checkpoint.hpp"
#include "gath/config.hpp"
#include "gath/data.hpp"
#include "gath/error.hpp"
#include "gath/evaluation.hpp"
#include "gath/image.hpp"
#include "gath/log.hpp"
#include "gath/losses.hpp"
#include "gath/networks.hpp"
#include "gath/postprocess.hpp"
#include "gath/synthbench.hpp"
#include "gath/tensor.hpp"
#include "gath/training.hpp"
