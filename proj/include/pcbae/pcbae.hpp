#pragma once

#include "pcbae/tensor.hpp"
#include "pcbae/rng.hpp"
#include "pcbae/ops.hpp"
#include "pcbae/optim.hpp"
#include "pcbae/model.hpp"
#include "pcbae/checkpoint.hpp"
#include "pcbae/image_io.hpp"
#include "pcbae/dataset.hpp"
#include "pcbae/train.hpp"
#include "pcbae/localizer.hpp"
#include "pcbae/metrics.hpp"
#include "pcbae/pipeline.hpp"
#include "pcbae/config.hpp"
#include "pcbae/runtime.hpp"
