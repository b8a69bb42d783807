import sys

from setuptools import setup

try:
    from setuptools.command.test import test as TestCommand
except ImportError:
    # removed in setuptools 72
    TestCommand = None

cmdclass = {}

if TestCommand is not None:
    class PyTest(TestCommand):
        """
        Copied from the pytest documentation,
        Allows the test suite to be run from setup.py
        """
        user_options = [('pytest-args=', 'a', "Arguments to pass to pytest")]
        '''`python setup.py test -a "-k pipeline"`'''

        def initialize_options(self):
            TestCommand.initialize_options(self)
            self.pytest_args = '--cov=motioncluster tests'

        def run_tests(self):
            import shlex, pytest
            errno = pytest.main(shlex.split(self.pytest_args))
            sys.exit(errno)

    cmdclass['test'] = PyTest

setup(name='motioncluster',
      version='0.1',
      description='Unsupervised discovery of part motions in segmented shape collections',
      license='ECL-2.0',
      packages=['motioncluster'],
      python_requires='>=3.8',
      install_requires=[
          'numpy',
          'scipy>=1.10',
          'trimesh>=3.21',
          'pyyaml',
      ],
      entry_points={
          'console_scripts': ['motioncluster=motioncluster.cli:main'],
      },
      zip_safe=False,
      tests_require=['pytest', 'coverage', 'pytest-cov'],
      extras_require={'test': ['pytest', 'coverage', 'pytest-cov']},
      cmdclass=cmdclass,
      classifiers=[
          'Development Status :: 2 - Pre-Alpha',
          'Intended Audience :: Science/Research',
          'Programming Language :: Python :: 3 :: Only',
          'Topic :: Scientific/Engineering :: Artificial Intelligence',
          'Topic :: Multimedia :: Graphics :: 3D Modeling',
      ]
)
