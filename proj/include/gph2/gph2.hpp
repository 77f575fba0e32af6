#pragma once

#include "gph2/adam.hpp"
#include "gph2/config.hpp"
#include "gph2/dense.hpp"
#include "gph2/encoder.hpp"
#include "gph2/error.hpp"
#include "gph2/fusion.hpp"
#include "gph2/graph.hpp"
#include "gph2/harness.hpp"
#include "gph2/multiview.hpp"
#include "gph2/pretrain.hpp"
#include "gph2/rng.hpp"
#include "gph2/sparse.hpp"
#include "gph2/svd.hpp"
#include "gph2/tensor.hpp"
