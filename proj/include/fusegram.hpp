#pragma once

#include "fusegram/anomaly.hpp"
#include "fusegram/codec.hpp"
#include "fusegram/data.hpp"
#include "fusegram/error.hpp"
#include "fusegram/eval.hpp"
#include "fusegram/gist.hpp"
#include "fusegram/gmm.hpp"
#include "fusegram/iforest.hpp"
#include "fusegram/isotonic.hpp"
#include "fusegram/kernels.hpp"
#include "fusegram/novelty.hpp"
#include "fusegram/pca.hpp"
#include "fusegram/pipeline.hpp"
#include "fusegram/prob.hpp"
#include "fusegram/svm.hpp"
#include "fusegram/util.hpp"
