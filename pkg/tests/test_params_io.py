import os
import shutil
import tempfile
import unittest

import numpy.testing as npt

from epiforge.drrnn import init_params
from epiforge.errors import ParseError
from epiforge.params_io import load_params, params_from_string, params_to_string, save_params
from epiforge.recurrent import init_lstm_params, init_rnn_params


def assert_same_params(test, a, b):
    test.assertEqual(a.kind, b.kind)
    for name in a.TRAINABLE:
        npt.assert_array_equal(getattr(a, name), getattr(b, name))


class TestParamsFile(unittest.TestCase):

    def setUp(self):
        self.tmp = tempfile.mkdtemp()

    def tearDown(self):
        shutil.rmtree(self.tmp)

    def test_reload_is_bitwise(self):
        for params in (init_params(5, K=4, seed=11), init_lstm_params(5, 5, m=3, seed=11),
                       init_rnn_params(5, 5, m=3, seed=11)):
            path = os.path.join(self.tmp, '%s.params' % params.kind)
            save_params(params, path)
            assert_same_params(self, params, load_params(path))

    def test_meta_and_header(self):
        params = init_params(3, K=2, seed=1)
        params.meta.update({'mode': 'aggregate', 'step': '0.25'})
        text = params_to_string(params)
        self.assertTrue(text.startswith('epiforge-params 1\nkind = drrnn\n'))
        self.assertIn('U = 3x3: ', text)
        again = params_from_string(text)
        self.assertEqual(again.meta, {'mode': 'aggregate', 'step': '0.25'})
        self.assertEqual((again.beta, again.gamma, again.eps_guard), (0.9, 0.1, 1e-8))

    def test_not_a_params_file(self):
        with self.assertRaises(ParseError):
            params_from_string('day,s_0\n')
        with self.assertRaises(ParseError):
            params_from_string('')

    def test_newer_version(self):
        text = params_to_string(init_params(2, K=1, seed=0)).replace('epiforge-params 1', 'epiforge-params 9')
        with self.assertRaises(ParseError):
            params_from_string(text)

    def test_missing_array(self):
        lines = params_to_string(init_params(2, K=2, seed=0)).splitlines()
        text = '\n'.join(line for line in lines if not line.startswith('eta = '))
        with self.assertRaises(ParseError):
            params_from_string(text)

    def test_header_disagrees_with_arrays(self):
        text = params_to_string(init_params(2, K=2, seed=0)).replace('K = 2', 'K = 3')
        with self.assertRaises(ParseError) as ctx:
            params_from_string(text)
        self.assertEqual(ctx.exception.line, 4)

    def test_bad_array(self):
        text = params_to_string(init_params(2, K=2, seed=0)).replace('W = 2: ', 'W = 3: ')
        with self.assertRaises(ParseError):
            params_from_string(text)

    def test_inconsistent_shapes(self):
        lines = params_to_string(init_params(2, K=2, seed=0)).splitlines()
        text = '\n'.join('W = 1: 0.5' if line.startswith('W = ') else line for line in lines)
        with self.assertRaises(ParseError):
            params_from_string(text)


if __name__ == '__main__':
    unittest.main()
