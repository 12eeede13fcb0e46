"""Base class and engine setup for the results database"""
# pylint: disable=too-few-public-methods

from sqlalchemy import create_engine
from sqlalchemy.orm import DeclarativeBase, sessionmaker

class ResultsBase(DeclarativeBase):
    """Results DB Class"""

def open_database(path):
    """Engine and session factory for the SQLite file at path"""
    engine = create_engine(f"sqlite:///{path}")
    return engine, sessionmaker(engine)
