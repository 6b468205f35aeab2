#pragma once

#include "cisr/blocking.hpp"
#include "cisr/checkpoint.hpp"
#include "cisr/codec.hpp"
#include "cisr/config.hpp"
#include "cisr/fusion.hpp"
#include "cisr/image_io.hpp"
#include "cisr/layers.hpp"
#include "cisr/metrics.hpp"
#include "cisr/network.hpp"
#include "cisr/nonlocal.hpp"
#include "cisr/ops.hpp"
#include "cisr/parameter_set.hpp"
#include "cisr/tensor.hpp"
#include "cisr/unfold.hpp"
