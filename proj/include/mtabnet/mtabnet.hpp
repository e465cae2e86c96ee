#pragma once

#include "mtabnet/errors.hpp"
#include "mtabnet/random.hpp"
#include "mtabnet/tensor.hpp"
#include "mtabnet/autodiff.hpp"
#include "mtabnet/layers.hpp"
#include "mtabnet/encoder.hpp"
#include "mtabnet/model.hpp"
#include "mtabnet/digest.hpp"
#include "mtabnet/data.hpp"
#include "mtabnet/synthcohort.hpp"
#include "mtabnet/random_forest.hpp"
#include "mtabnet/preprocess.hpp"
#include "mtabnet/smogn.hpp"
#include "mtabnet/metrics.hpp"
#include "mtabnet/config.hpp"
#include "mtabnet/trainer.hpp"
#include "mtabnet/explain.hpp"
#include "mtabnet/checkpoint.hpp"
