#pragma once

#include "feddadil/types.hpp"
#include "feddadil/random.hpp"
#include "feddadil/ot.hpp"
#include "feddadil/barycenter.hpp"
#include "feddadil/dictionary.hpp"
#include "feddadil/classifier.hpp"
#include "feddadil/wire.hpp"
#include "feddadil/federation.hpp"
#include "feddadil/adaptation.hpp"
#include "feddadil/datasets.hpp"
#include "feddadil/experiment.hpp"
