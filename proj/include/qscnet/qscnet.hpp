#pragma once

#include "qscnet/conditioning/embedder.hpp"
#include "qscnet/conditioning/film.hpp"
#include "qscnet/dataset/manifest.hpp"
#include "qscnet/dataset/pools.hpp"
#include "qscnet/dataset/sampler.hpp"
#include "qscnet/dataset/toy.hpp"
#include "qscnet/evaluation/evaluate.hpp"
#include "qscnet/evaluation/metrics.hpp"
#include "qscnet/model/network.hpp"
#include "qscnet/spectral/spectral.hpp"
#include "qscnet/spectral/wav.hpp"
#include "qscnet/training/checkpoint.hpp"
#include "qscnet/training/optim.hpp"
#include "qscnet/training/run.hpp"
#include "qscnet/training/trainer.hpp"
