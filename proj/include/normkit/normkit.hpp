#pragma once

#include "normkit/errors.hpp"
#include "normkit/generator.hpp"
#include "normkit/gradcheck.hpp"
#include "normkit/io.hpp"
#include "normkit/layers.hpp"
#include "normkit/loss.hpp"
#include "normkit/normalization.hpp"
#include "normkit/parallel.hpp"
#include "normkit/rng.hpp"
#include "normkit/synthetic.hpp"
#include "normkit/tensor.hpp"
#include "normkit/training.hpp"
