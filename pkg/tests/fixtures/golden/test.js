// the workload the trace was recorded from
require('express-lite');
require('@acme/log');
require('require-uncached')('resolve-from');
require('resolve-from');
