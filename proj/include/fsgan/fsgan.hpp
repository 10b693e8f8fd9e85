#pragma once

#include "fsgan/checkpoint.hpp"
#include "fsgan/data.hpp"
#include "fsgan/error.hpp"
#include "fsgan/experiment.hpp"
#include "fsgan/federation.hpp"
#include "fsgan/gan.hpp"
#include "fsgan/metrics.hpp"
#include "fsgan/tensor_nn.hpp"
