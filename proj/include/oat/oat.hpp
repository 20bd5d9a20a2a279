#pragma once

#include "oat/cip.hpp"
#include "oat/config.hpp"
#include "oat/das.hpp"
#include "oat/diffusion.hpp"
#include "oat/error.hpp"
#include "oat/forward_model.hpp"
#include "oat/geometry.hpp"
#include "oat/image.hpp"
#include "oat/io.hpp"
#include "oat/metrics.hpp"
#include "oat/models.hpp"
#include "oat/nn/ops.hpp"
#include "oat/nn/params.hpp"
#include "oat/nn/tensor.hpp"
#include "oat/patching.hpp"
#include "oat/phantom_io.hpp"
#include "oat/pipeline.hpp"
#include "oat/rng.hpp"
