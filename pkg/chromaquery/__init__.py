from chromaquery import cqcolorspace as colorspace
from chromaquery import cqdata as data
from chromaquery import cqdataset as dataset
from chromaquery import cqfiles as files
from chromaquery import cqfusion as fusion
from chromaquery import cqlosses as losses
from chromaquery import cqmethods as methods
from chromaquery import cqmetrics as metrics
from chromaquery import cqtrainer as trainer

__version__ = '0.1.0'
