#pragma once

#include "lobekit/ablation.hpp"
#include "lobekit/augment.hpp"
#include "lobekit/checkpoint.hpp"
#include "lobekit/config.hpp"
#include "lobekit/dataset.hpp"
#include "lobekit/error.hpp"
#include "lobekit/layers.hpp"
#include "lobekit/loss.hpp"
#include "lobekit/metaimage.hpp"
#include "lobekit/metrics.hpp"
#include "lobekit/model.hpp"
#include "lobekit/phantom.hpp"
#include "lobekit/preprocess.hpp"
#include "lobekit/random.hpp"
#include "lobekit/tensor.hpp"
#include "lobekit/trainer.hpp"
#include "lobekit/volume.hpp"
