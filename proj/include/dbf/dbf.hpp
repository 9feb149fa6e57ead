#pragma once

#include "dbf/checkpoint.hpp"
#include "dbf/config.hpp"
#include "dbf/data.hpp"
#include "dbf/labelgen.hpp"
#include "dbf/losses.hpp"
#include "dbf/metrics.hpp"
#include "dbf/network.hpp"
#include "dbf/optim.hpp"
#include "dbf/plot.hpp"
#include "dbf/trainer.hpp"
